import { readFileSync } from "node:fs";

export function readJsonl(path: string): Array<{ lineno: number; record: Record<string, unknown> }> {
  const out: Array<{ lineno: number; record: Record<string, unknown> }> = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    if (!line.trim()) return;
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch (error) {
      throw new Error(`${path}:${index + 1}: malformed JSON (${(error as Error).message})`);
    }
    if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
      throw new Error(`${path}:${index + 1}: expected a JSON object`);
    }
    out.push({ lineno: index + 1, record: parsed as Record<string, unknown> });
  });
  return out;
}

export function toJsonlLine(record: Record<string, unknown>): string {
  return JSON.stringify(record) + "\n";
}
