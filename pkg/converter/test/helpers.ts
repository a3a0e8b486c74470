/** Test-side writers for npy buffers and zip (npz) archives. */
import * as zlib from "node:zlib";

export function makeNpy(
  shape: number[],
  values: number[],
  dtype: "<f8" | "<f4" | "<i8" = "<f8",
  version: 1 | 2 = 1,
): Buffer {
  const count = shape.reduce((a, b) => a * b, 1);
  if (values.length !== count) {
    throw new Error("value count does not match shape");
  }
  const shapeStr = shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let header = `{'descr': '${dtype}', 'fortran_order': False, 'shape': ${shapeStr}, }`;
  const preludeLen = version === 1 ? 10 : 12;
  const total = preludeLen + header.length + 1;
  const padded = Math.ceil(total / 64) * 64;
  header = header + " ".repeat(padded - total) + "\n";

  const head = Buffer.alloc(preludeLen);
  head.write("\x93NUMPY", 0, "latin1");
  head[6] = version;
  head[7] = 0;
  if (version === 1) {
    head.writeUInt16LE(header.length, 8);
  } else {
    head.writeUInt32LE(header.length, 8);
  }

  const itemBytes = dtype === "<f4" ? 4 : 8;
  const body = Buffer.alloc(count * itemBytes);
  values.forEach((v, i) => {
    if (dtype === "<f8") {
      body.writeDoubleLE(v, i * 8);
    } else if (dtype === "<f4") {
      body.writeFloatLE(v, i * 4);
    } else {
      body.writeBigInt64LE(BigInt(Math.round(v)), i * 8);
    }
  });
  return Buffer.concat([head, Buffer.from(header, "latin1"), body]);
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export interface ZipSpec {
  name: string;
  data: Buffer;
  deflate?: boolean;
}

export function makeZip(specs: ZipSpec[]): Buffer {
  const locals: Buffer[] = [];
  const centrals: Buffer[] = [];
  let offset = 0;
  for (const spec of specs) {
    const nameBuf = Buffer.from(spec.name, "utf8");
    const payload = spec.deflate ? zlib.deflateRawSync(spec.data) : spec.data;
    const method = spec.deflate ? 8 : 0;
    const crc = crc32(spec.data);

    const local = Buffer.alloc(30);
    local.writeUInt32LE(0x04034b50, 0);
    local.writeUInt16LE(20, 4); // version needed
    local.writeUInt16LE(0, 6); // flags
    local.writeUInt16LE(method, 8);
    local.writeUInt32LE(crc, 14);
    local.writeUInt32LE(payload.length, 18);
    local.writeUInt32LE(spec.data.length, 22);
    local.writeUInt16LE(nameBuf.length, 26);
    local.writeUInt16LE(0, 28);
    locals.push(local, nameBuf, payload);

    const central = Buffer.alloc(46);
    central.writeUInt32LE(0x02014b50, 0);
    central.writeUInt16LE(20, 4); // made by
    central.writeUInt16LE(20, 6); // needed
    central.writeUInt16LE(method, 10);
    central.writeUInt32LE(crc, 16);
    central.writeUInt32LE(payload.length, 20);
    central.writeUInt32LE(spec.data.length, 24);
    central.writeUInt16LE(nameBuf.length, 28);
    central.writeUInt32LE(offset, 42);
    centrals.push(central, nameBuf);

    offset += 30 + nameBuf.length + payload.length;
  }
  const centralStart = offset;
  const centralSize = centrals.reduce((a, b) => a + b.length, 0);
  const eocd = Buffer.alloc(22);
  eocd.writeUInt32LE(0x06054b50, 0);
  eocd.writeUInt16LE(specs.length, 8);
  eocd.writeUInt16LE(specs.length, 10);
  eocd.writeUInt32LE(centralSize, 12);
  eocd.writeUInt32LE(centralStart, 16);
  return Buffer.concat([...locals, ...centrals, eocd]);
}
