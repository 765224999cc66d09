// AMEV1 binary embedding store: ASCII magic "AMEV1", little-endian u32 dim,
// u64 row count, u8 normalized flag, then per row a u16 key length, the UTF-8
// key bytes, and dim little-endian f32 values.

const MAGIC = Buffer.from("AMEV1", "ascii");

export interface AmevRow {
  key: string;
  values: Float32Array;
}

export function encodeAmev(dim: number, rows: AmevRow[], normalized: boolean): Buffer {
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new Error(`embedding dim must be a positive integer, got ${dim}`);
  }
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(MAGIC.length + 4 + 8 + 1);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(dim, MAGIC.length);
  header.writeBigUInt64LE(BigInt(rows.length), MAGIC.length + 4);
  header.writeUInt8(normalized ? 1 : 0, MAGIC.length + 12);
  chunks.push(header);

  for (const row of rows) {
    if (row.values.length !== dim) {
      throw new Error(`row "${row.key}" has dim ${row.values.length}, expected ${dim}`);
    }
    const keyBytes = Buffer.from(row.key, "utf-8");
    if (keyBytes.length > 0xffff) {
      throw new Error(`key too long (${keyBytes.length} bytes)`);
    }
    const head = Buffer.alloc(2);
    head.writeUInt16LE(keyBytes.length, 0);
    const payload = Buffer.alloc(dim * 4);
    for (let i = 0; i < dim; i++) {
      payload.writeFloatLE(row.values[i], i * 4);
    }
    chunks.push(head, keyBytes, payload);
  }
  return Buffer.concat(chunks);
}

export function decodeAmev(buffer: Buffer): { dim: number; normalized: boolean; rows: AmevRow[] } {
  if (!buffer.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new Error("not an AMEV1 embedding store (bad magic)");
  }
  let offset = MAGIC.length;
  const dim = buffer.readUInt32LE(offset);
  const count = Number(buffer.readBigUInt64LE(offset + 4));
  const normalized = buffer.readUInt8(offset + 12) === 1;
  offset += 13;
  const rows: AmevRow[] = [];
  for (let i = 0; i < count; i++) {
    const keyLength = buffer.readUInt16LE(offset);
    offset += 2;
    const key = buffer.subarray(offset, offset + keyLength).toString("utf-8");
    offset += keyLength;
    const values = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      values[j] = buffer.readFloatLE(offset + j * 4);
    }
    offset += dim * 4;
    rows.push({ key, values });
  }
  if (offset !== buffer.length) {
    throw new Error(`corrupted store: ${buffer.length - offset} trailing bytes`);
  }
  return { dim, normalized, rows };
}
