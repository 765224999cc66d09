// Model resolution. "hash:<dim>" is a deterministic local embedder that needs
// no downloads; any other id is treated as a pretrained model served by
// @huggingface/transformers, which must be installed and cached locally.

import { createHash } from "node:crypto";

export type EmbedFn = (texts: string[]) => Promise<Float32Array[]>;
export type PairScoreFn = (left: string, right: string) => Promise<number>;

const HASH_MODEL = /^hash:(\d+)$/;

function tokenize(text: string): string[] {
  return text.toLowerCase().match(/[0-9a-z]+/g) ?? [];
}

export function hashEmbed(text: string, dim: number): Float32Array {
  const tokens = tokenize(text);
  const features = [...tokens];
  for (let i = 0; i + 1 < tokens.length; i++) {
    features.push(`${tokens[i]} ${tokens[i + 1]}`);
  }
  const values = new Float64Array(dim);
  for (const feature of features) {
    const digest = createHash("sha256").update(feature).digest();
    const bucket = digest.readUInt32LE(0) % dim;
    const sign = (digest[4] & 1) === 0 ? 1 : -1;
    values[bucket] += sign;
  }
  let norm = Math.hypot(...values);
  if (norm === 0) {
    values[0] = 1;
    norm = 1;
  }
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) {
    out[i] = values[i] / norm;
  }
  return out;
}

function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let normA = 0;
  let normB = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    normA += a[i] * a[i];
    normB += b[i] * b[i];
  }
  const denom = Math.sqrt(normA) * Math.sqrt(normB);
  return denom === 0 ? 0 : dot / denom;
}

// Optional dependency: only needed for real pretrained model ids, so the
// specifier is kept dynamic and failures surface as a clear error.
const TRANSFORMERS_MODULE = "@huggingface/transformers";

async function loadTransformers(): Promise<any> {
  try {
    return await import(TRANSFORMERS_MODULE);
  } catch {
    throw new Error(
      `model backend unavailable: install ${TRANSFORMERS_MODULE} (or use a hash:<dim> model id)`,
    );
  }
}

export async function resolveTextEmbedder(modelId: string, batchSize: number): Promise<EmbedFn> {
  const hashMatch = HASH_MODEL.exec(modelId);
  if (hashMatch) {
    const dim = Number(hashMatch[1]);
    if (dim <= 0) throw new Error(`invalid hash embedder dim in model id ${modelId}`);
    return async (texts) => texts.map((text) => hashEmbed(text, dim));
  }
  const { pipeline } = await loadTransformers();
  const extractor = await pipeline("feature-extraction", modelId);
  return async (texts) => {
    const out: Float32Array[] = [];
    for (let start = 0; start < texts.length; start += batchSize) {
      const batch = texts.slice(start, start + batchSize);
      const result = await extractor(batch, { pooling: "mean", normalize: true });
      const [rows, dim] = [result.dims[0], result.dims[result.dims.length - 1]];
      const data = result.data as Float32Array;
      for (let i = 0; i < rows; i++) {
        out.push(Float32Array.from(data.subarray(i * dim, (i + 1) * dim)));
      }
    }
    return out;
  };
}

export async function resolvePairScorer(modelId: string, batchSize: number): Promise<PairScoreFn> {
  const hashMatch = HASH_MODEL.exec(modelId);
  if (hashMatch) {
    const dim = Number(hashMatch[1]);
    return async (left, right) => cosine(hashEmbed(left, dim), hashEmbed(right, dim));
  }
  const { pipeline } = await loadTransformers();
  const classifier = await pipeline("text-classification", modelId, { top_k: null });
  return async (left, right) => {
    const result = await classifier({ text: left, text_pair: right });
    const entries: Array<{ label: string; score: number }> = Array.isArray(result) ? result.flat() : [result];
    const entailment = entries.find((e) => /entail/i.test(e.label));
    return entailment ? entailment.score : entries[0].score;
  };
}
