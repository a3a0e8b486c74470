/**
 * Minimal read-only ZIP container support, enough for `.npz` archives
 * (stored or deflate entries, no zip64, no encryption).
 */
import * as zlib from "node:zlib";

const EOCD_SIG = 0x06054b50;
const CDIR_SIG = 0x02014b50;
const LOCAL_SIG = 0x04034b50;

export interface ZipEntry {
  name: string;
  data: Buffer;
}

export function readZip(buf: Buffer): Map<string, Buffer> {
  // scan backwards for the end-of-central-directory record (the comment
  // field makes its position variable)
  let eocd = -1;
  const minPos = Math.max(0, buf.length - 65557);
  for (let i = buf.length - 22; i >= minPos; i--) {
    if (buf.readUInt32LE(i) === EOCD_SIG) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) {
    throw new Error("not a zip archive (no end-of-central-directory)");
  }
  const entryCount = buf.readUInt16LE(eocd + 10);
  let offset = buf.readUInt32LE(eocd + 16);

  const entries = new Map<string, Buffer>();
  for (let k = 0; k < entryCount; k++) {
    if (buf.readUInt32LE(offset) !== CDIR_SIG) {
      throw new Error(`bad central-directory signature at ${offset}`);
    }
    const method = buf.readUInt16LE(offset + 10);
    const compSize = buf.readUInt32LE(offset + 20);
    const rawSize = buf.readUInt32LE(offset + 24);
    const nameLen = buf.readUInt16LE(offset + 28);
    const extraLen = buf.readUInt16LE(offset + 30);
    const commentLen = buf.readUInt16LE(offset + 32);
    const localOffset = buf.readUInt32LE(offset + 42);
    const name = buf.toString("utf8", offset + 46, offset + 46 + nameLen);

    if (buf.readUInt32LE(localOffset) !== LOCAL_SIG) {
      throw new Error(`bad local-header signature for '${name}'`);
    }
    const localNameLen = buf.readUInt16LE(localOffset + 26);
    const localExtraLen = buf.readUInt16LE(localOffset + 28);
    const dataStart = localOffset + 30 + localNameLen + localExtraLen;
    const raw = buf.subarray(dataStart, dataStart + compSize);

    let data: Buffer;
    if (method === 0) {
      data = Buffer.from(raw);
    } else if (method === 8) {
      data = zlib.inflateRawSync(raw);
    } else {
      throw new Error(`unsupported compression method ${method} for '${name}'`);
    }
    if (data.length !== rawSize) {
      throw new Error(`size mismatch for '${name}': ${data.length} != ${rawSize}`);
    }
    entries.set(name, data);
    offset += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}
