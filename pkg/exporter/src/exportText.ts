import { encodeAmev } from "./amev.js";
import { readJsonl } from "./jsonl.js";
import { ExportManifest, sha256File, writeArtifact } from "./manifest.js";
import { resolveTextEmbedder } from "./models.js";

export interface ExportTextOptions {
  input: string;
  model: string;
  output: string;
  batchSize?: number;
}

interface TextRecord {
  key: string;
  text: string;
}

/** entities.jsonl rows embed title + description; reviews.jsonl rows embed the review text. */
function recordText(record: Record<string, unknown>, context: string): TextRecord {
  if (typeof record.entity_id === "string") {
    const title = typeof record.title === "string" ? record.title : "";
    const description = typeof record.description === "string" ? record.description : "";
    return { key: record.entity_id, text: `${title} ${description}`.trim() };
  }
  if (typeof record.review_id === "string") {
    if (typeof record.text !== "string") {
      throw new Error(`${context}: review record without a text field`);
    }
    return { key: record.review_id, text: record.text };
  }
  throw new Error(`${context}: record has neither entity_id nor review_id`);
}

export async function exportTextEmbeddings(options: ExportTextOptions): Promise<ExportManifest> {
  const batchSize = options.batchSize ?? 32;
  const records = readJsonl(options.input);
  if (records.length === 0) {
    throw new Error(`${options.input}: no records to embed`);
  }
  const inputs: TextRecord[] = [];
  const seen = new Set<string>();
  for (const { lineno, record } of records) {
    const item = recordText(record, `${options.input}:${lineno}`);
    if (seen.has(item.key)) {
      throw new Error(`${options.input}:${lineno}: duplicate record id "${item.key}"`);
    }
    seen.add(item.key);
    inputs.push(item);
  }

  const embed = await resolveTextEmbedder(options.model, batchSize);
  const vectors = await embed(inputs.map((i) => i.text));
  if (vectors.length !== inputs.length) {
    throw new Error(`model returned ${vectors.length} vectors for ${inputs.length} records`);
  }
  const dim = vectors[0].length;
  const rows = inputs.map((item, index) => {
    const values = unitNormalize(vectors[index], item.key);
    if (values.length !== dim) {
      throw new Error(`inconsistent embedding dims: ${values.length} vs ${dim}`);
    }
    return { key: item.key, values };
  });

  const payload = encodeAmev(dim, rows, true);
  return writeArtifact(options.output, payload, {
    model: options.model,
    input: options.input,
    input_sha256: sha256File(options.input),
    dim,
    normalized: true,
    row_count: rows.length,
  });
}

function unitNormalize(vector: Float32Array, key: string): Float32Array {
  let norm = 0;
  for (const v of vector) norm += v * v;
  norm = Math.sqrt(norm);
  if (!Number.isFinite(norm) || norm === 0) {
    throw new Error(`embedding for "${key}" is zero or non-finite`);
  }
  const out = new Float32Array(vector.length);
  for (let i = 0; i < vector.length; i++) out[i] = vector[i] / norm;
  return out;
}
