#!/usr/bin/env node
// attrlink-export: run text encoders / pair scorers over corpus files and emit
// AMEV1 embedding stores and score tables for the linking engine.
//
//   attrlink-export export-text   --model hash:256 --input entities.jsonl --output entities.amev
//   attrlink-export export-scores --model hash:256 --input pairs.jsonl    --output scores.jsonl
//
// Pretrained model ids require @huggingface/transformers installed locally.

import { exportPairScores } from "./exportScores.js";
import { exportTextEmbeddings } from "./exportText.js";

function parseFlags(argv: string[]): Record<string, string> {
  const flags: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const name = argv[i];
    const value = argv[i + 1];
    if (!name.startsWith("--") || value === undefined) {
      throw new Error(`usage error near "${name}"`);
    }
    flags[name.slice(2)] = value;
  }
  return flags;
}

function required(flags: Record<string, string>, name: string): string {
  const value = flags[name];
  if (!value) throw new Error(`missing required flag --${name}`);
  return value;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  if (!command || command === "--help") {
    console.error("usage: attrlink-export <export-text|export-scores> --model ID --input FILE --output FILE [--batch-size N]");
    return command ? 0 : 1;
  }
  const flags = parseFlags(rest);
  const options = {
    model: required(flags, "model"),
    input: required(flags, "input"),
    output: required(flags, "output"),
    batchSize: flags["batch-size"] ? Number(flags["batch-size"]) : undefined,
  };
  if (command === "export-text") {
    const manifest = await exportTextEmbeddings(options);
    console.error(`wrote ${manifest.row_count} rows (dim ${manifest.dim}) to ${options.output}`);
    return 0;
  }
  if (command === "export-scores") {
    const manifest = await exportPairScores(options);
    console.error(`wrote ${manifest.row_count} score records to ${options.output}`);
    return 0;
  }
  console.error(`unknown command "${command}"`);
  return 1;
}

main()
  .then((code) => process.exit(code))
  .catch((error) => {
    console.error(String(error instanceof Error ? error.message : error));
    process.exit(2);
  });
