import { createHash } from "node:crypto";
import { readFileSync, renameSync, writeFileSync } from "node:fs";

export interface ExportManifest {
  model: string;
  input: string;
  input_sha256: string;
  output_sha256: string;
  dim?: number;
  normalized?: boolean;
  row_count: number;
}

export function sha256File(path: string): string {
  return createHash("sha256").update(readFileSync(path)).digest("hex");
}

/** Write output atomically (temp file + rename), then its manifest sidecar. */
export function writeArtifact(outputPath: string, payload: Buffer | string, manifest: Omit<ExportManifest, "output_sha256">): ExportManifest {
  const temp = `${outputPath}.tmp`;
  writeFileSync(temp, payload);
  renameSync(temp, outputPath);
  const full: ExportManifest = { ...manifest, output_sha256: sha256File(outputPath) };
  writeFileSync(`${outputPath}.manifest.json`, JSON.stringify(full, Object.keys(full).sort(), 2) + "\n");
  return full;
}
