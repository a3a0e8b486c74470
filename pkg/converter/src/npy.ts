/**
 * Minimal parser for the NumPy `.npy` serialization format (versions 1.0
 * and 2.0, little-endian numeric dtypes, C order).
 *
 * See https://numpy.org/devdocs/reference/generated/numpy.lib.format.html
 */

export interface NumpyArray {
  shape: number[];
  /** Values converted to float64 regardless of the stored dtype. */
  data: Float64Array;
}

const MAGIC = [0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59]; // \x93NUMPY

function parseHeaderDict(header: string): { descr: string; fortranOrder: boolean; shape: number[] } {
  const descrMatch = header.match(/'descr'\s*:\s*'([^']+)'/);
  const orderMatch = header.match(/'fortran_order'\s*:\s*(True|False)/);
  const shapeMatch = header.match(/'shape'\s*:\s*\(([^)]*)\)/);
  if (!descrMatch || !orderMatch || !shapeMatch) {
    throw new Error(`unparseable npy header: ${header.trim()}`);
  }
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => {
      const n = Number(s);
      if (!Number.isInteger(n) || n < 0) {
        throw new Error(`bad shape entry '${s}'`);
      }
      return n;
    });
  return {
    descr: descrMatch[1],
    fortranOrder: orderMatch[1] === "True",
    shape,
  };
}

export function parseNpy(buf: Buffer): NumpyArray {
  if (buf.length < 10) {
    throw new Error("npy buffer too short");
  }
  for (let i = 0; i < MAGIC.length; i++) {
    if (buf[i] !== MAGIC[i]) {
      throw new Error("not an npy buffer (bad magic)");
    }
  }
  const major = buf[6];
  let headerLen: number;
  let dataOffset: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    dataOffset = 10 + headerLen;
  } else if (major === 2 || major === 3) {
    headerLen = buf.readUInt32LE(8);
    dataOffset = 12 + headerLen;
  } else {
    throw new Error(`unsupported npy version ${major}.${buf[7]}`);
  }
  const header = parseHeaderDict(buf.toString("latin1", major === 1 ? 10 : 12, dataOffset));
  if (header.fortranOrder) {
    throw new Error("fortran-order npy arrays are not supported");
  }
  const count = header.shape.reduce((a, b) => a * b, 1);
  const out = new Float64Array(count);
  const read = readerFor(header.descr);
  const itemBytes = itemSize(header.descr);
  if (dataOffset + count * itemBytes > buf.length) {
    throw new Error("npy buffer truncated");
  }
  for (let i = 0; i < count; i++) {
    out[i] = read(buf, dataOffset + i * itemBytes);
  }
  return { shape: header.shape, data: out };
}

function itemSize(descr: string): number {
  switch (descr) {
    case "<f8":
    case "<i8":
    case "<u8":
      return 8;
    case "<f4":
    case "<i4":
    case "<u4":
      return 4;
    default:
      throw new Error(`unsupported npy dtype '${descr}'`);
  }
}

function readerFor(descr: string): (buf: Buffer, off: number) => number {
  switch (descr) {
    case "<f8":
      return (b, o) => b.readDoubleLE(o);
    case "<f4":
      return (b, o) => b.readFloatLE(o);
    case "<i8":
      return (b, o) => Number(b.readBigInt64LE(o));
    case "<u8":
      return (b, o) => Number(b.readBigUInt64LE(o));
    case "<i4":
      return (b, o) => b.readInt32LE(o);
    case "<u4":
      return (b, o) => b.readUInt32LE(o);
    default:
      throw new Error(`unsupported npy dtype '${descr}'`);
  }
}
