/**
 * Convert hierarchical binary IMU archives into `xio-v1` columnar files.
 *
 * An archive is an `.npz` container whose members are named
 * `<sequence>/<channel>.npy`.  The per-dataset mapping file (JSON) names
 * the channels and declares their units and quaternion component order,
 * because silent convention flips are the classic failure mode here:
 *
 *   { "time": "time", "gyro": "gyro", "accel": "accel",
 *     "quat": "quat", "pos": "pos",
 *     "time_unit": "s", "gyro_unit": "deg/s", "accel_unit": "g",
 *     "quat_order": "xyzw" }
 *
 * Output: one `xio-v1` file per valid sequence (SI units, normalized
 * Hamilton w-first quaternions) plus a manifest CSV; sequences with
 * missing channels or non-monotonic timestamps are skipped and recorded.
 * Conversion is deterministic, so re-running is byte-identical.
 */
import * as fs from "node:fs";
import * as path from "node:path";

import { parseNpy, NumpyArray } from "./npy";
import { readZip } from "./zip";

const GRAVITY = 9.80665;

export interface Mapping {
  time: string;
  gyro: string;
  accel: string;
  quat?: string;
  pos?: string;
  time_unit?: "s" | "ms" | "us" | "ns";
  gyro_unit?: "rad/s" | "deg/s";
  accel_unit?: "m/s2" | "g";
  quat_order?: "wxyz" | "xyzw";
}

export interface SequenceResult {
  id: string;
  status: "ok" | "skipped";
  rows: number;
  durationS: number;
  file?: string;
  reason?: string;
}

export class MissingChannel extends Error {}
export class NonMonotonicTime extends Error {}

export function loadMapping(mappingPath: string): Mapping {
  const raw = JSON.parse(fs.readFileSync(mappingPath, "utf8"));
  for (const key of ["time", "gyro", "accel"]) {
    if (typeof raw[key] !== "string") {
      throw new Error(`mapping is missing required channel '${key}'`);
    }
  }
  return raw as Mapping;
}

const TIME_SCALE: Record<string, number> = {
  s: 1.0,
  ms: 1e-3,
  us: 1e-6,
  ns: 1e-9,
};

function columns(arr: NumpyArray, want: number, what: string): Float64Array[] {
  if (arr.shape.length !== 2 || arr.shape[1] !== want) {
    throw new Error(`${what}: expected shape (N, ${want}), got (${arr.shape.join(", ")})`);
  }
  const n = arr.shape[0];
  const out: Float64Array[] = [];
  for (let c = 0; c < want; c++) {
    const col = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      col[i] = arr.data[i * want + c];
    }
    out.push(col);
  }
  return out;
}

function vector(arr: NumpyArray, what: string): Float64Array {
  if (arr.shape.length === 2 && arr.shape[1] === 1) {
    return arr.data;
  }
  if (arr.shape.length !== 1) {
    throw new Error(`${what}: expected shape (N,), got (${arr.shape.join(", ")})`);
  }
  return arr.data;
}

interface Sequence {
  id: string;
  t: Float64Array;
  gyro: Float64Array[];
  accel: Float64Array[];
  quat?: Float64Array[];
  pos?: Float64Array[];
}

export function groupSequences(entries: Map<string, Buffer>): Map<string, Map<string, NumpyArray>> {
  const groups = new Map<string, Map<string, NumpyArray>>();
  for (const [name, data] of entries) {
    if (!name.endsWith(".npy")) {
      continue;
    }
    const stem = name.slice(0, -4);
    const slash = stem.indexOf("/");
    if (slash <= 0) {
      continue; // flat members do not belong to a sequence
    }
    const seqId = stem.slice(0, slash);
    const channel = stem.slice(slash + 1);
    if (!groups.has(seqId)) {
      groups.set(seqId, new Map());
    }
    groups.get(seqId)!.set(channel, parseNpy(data));
  }
  return groups;
}

function extractSequence(id: string, channels: Map<string, NumpyArray>, mapping: Mapping): Sequence {
  for (const key of ["time", "gyro", "accel"] as const) {
    if (!channels.has(mapping[key])) {
      throw new MissingChannel(`sequence '${id}' is missing channel '${mapping[key]}'`);
    }
  }
  const t = vector(channels.get(mapping.time)!, `${id}/${mapping.time}`);
  const tScale = TIME_SCALE[mapping.time_unit ?? "s"];
  if (tScale === undefined) {
    throw new Error(`unknown time unit '${mapping.time_unit}'`);
  }
  const tSec = new Float64Array(t.length);
  for (let i = 0; i < t.length; i++) {
    tSec[i] = t[i] * tScale;
    if (!Number.isFinite(tSec[i])) {
      throw new NonMonotonicTime(`sequence '${id}': non-finite timestamp at row ${i}`);
    }
    if (i > 0 && tSec[i] <= tSec[i - 1]) {
      throw new NonMonotonicTime(`sequence '${id}': non-monotonic timestamp at row ${i}`);
    }
  }

  const gyro = columns(channels.get(mapping.gyro)!, 3, `${id}/${mapping.gyro}`);
  const accel = columns(channels.get(mapping.accel)!, 3, `${id}/${mapping.accel}`);
  const gScale = (mapping.gyro_unit ?? "rad/s") === "deg/s" ? Math.PI / 180.0 : 1.0;
  const aScale = (mapping.accel_unit ?? "m/s2") === "g" ? GRAVITY : 1.0;
  for (const col of gyro) {
    for (let i = 0; i < col.length; i++) {
      col[i] *= gScale;
    }
  }
  for (const col of accel) {
    for (let i = 0; i < col.length; i++) {
      col[i] *= aScale;
    }
  }
  checkLength(id, "gyro", gyro[0].length, tSec.length);
  checkLength(id, "accel", accel[0].length, tSec.length);

  const seq: Sequence = { id, t: tSec, gyro, accel };
  if (mapping.quat && mapping.pos && channels.has(mapping.quat) && channels.has(mapping.pos)) {
    const rawQuat = columns(channels.get(mapping.quat)!, 4, `${id}/${mapping.quat}`);
    const pos = columns(channels.get(mapping.pos)!, 3, `${id}/${mapping.pos}`);
    checkLength(id, "quat", rawQuat[0].length, tSec.length);
    checkLength(id, "pos", pos[0].length, tSec.length);
    // reorder to Hamilton w-first, then normalize each sample
    const order = mapping.quat_order ?? "wxyz";
    const [qw, qx, qy, qz] =
      order === "xyzw" ? [rawQuat[3], rawQuat[0], rawQuat[1], rawQuat[2]] : rawQuat;
    for (let i = 0; i < tSec.length; i++) {
      const norm = Math.hypot(qw[i], qx[i], qy[i], qz[i]);
      if (!(norm > 0)) {
        throw new Error(`sequence '${id}': zero quaternion at row ${i}`);
      }
      qw[i] /= norm;
      qx[i] /= norm;
      qy[i] /= norm;
      qz[i] /= norm;
    }
    seq.quat = [qw, qx, qy, qz];
    seq.pos = pos;
  }
  return seq;
}

function checkLength(id: string, what: string, got: number, want: number): void {
  if (got !== want) {
    throw new Error(`sequence '${id}': ${what} has ${got} rows, time has ${want}`);
  }
}

function medianRate(t: Float64Array): number {
  const dts: number[] = [];
  for (let i = 1; i < t.length; i++) {
    dts.push(t[i] - t[i - 1]);
  }
  dts.sort((a, b) => a - b);
  const mid = dts.length >> 1;
  const dt = dts.length % 2 ? dts[mid] : 0.5 * (dts[mid - 1] + dts[mid]);
  return 1.0 / dt;
}

export function sequenceToXio(seq: Sequence): string {
  const rate = medianRate(seq.t);
  const lines: string[] = [`# xio-v1 rate=${formatNumber(rate)}`];
  for (let i = 0; i < seq.t.length; i++) {
    const row = [
      seq.t[i],
      seq.gyro[0][i], seq.gyro[1][i], seq.gyro[2][i],
      seq.accel[0][i], seq.accel[1][i], seq.accel[2][i],
    ];
    if (seq.quat && seq.pos) {
      row.push(
        seq.quat[0][i], seq.quat[1][i], seq.quat[2][i], seq.quat[3][i],
        seq.pos[0][i], seq.pos[1][i], seq.pos[2][i],
      );
    }
    lines.push(row.map(formatNumber).join(","));
  }
  return lines.join("\n") + "\n";
}

/** Shortest exact decimal representation (round-trips through float64). */
function formatNumber(x: number): string {
  if (!Number.isFinite(x)) {
    throw new Error(`non-finite value ${x}`);
  }
  return String(x);
}

export function convert(archivePath: string, outDir: string, mapping: Mapping): SequenceResult[] {
  const entries = readZip(fs.readFileSync(archivePath));
  const groups = groupSequences(entries);
  if (groups.size === 0) {
    throw new Error(`${archivePath}: no '<sequence>/<channel>.npy' members found`);
  }
  fs.mkdirSync(outDir, { recursive: true });

  const results: SequenceResult[] = [];
  const ids = [...groups.keys()].sort();
  for (const id of ids) {
    try {
      const seq = extractSequence(id, groups.get(id)!, mapping);
      const text = sequenceToXio(seq);
      const file = path.join(outDir, `${id}.csv`);
      fs.writeFileSync(file, text);
      results.push({
        id,
        status: "ok",
        rows: seq.t.length,
        durationS: seq.t[seq.t.length - 1] - seq.t[0],
        file,
      });
    } catch (err) {
      if (err instanceof MissingChannel || err instanceof NonMonotonicTime) {
        results.push({
          id,
          status: "skipped",
          rows: 0,
          durationS: 0,
          reason: `${err.constructor.name}: ${err.message}`,
        });
      } else {
        throw err;
      }
    }
  }

  const manifest = ["sequence,status,rows,duration_s,reason"];
  for (const r of results) {
    const reason = r.reason ? `"${r.reason.replace(/"/g, "'")}"` : "";
    manifest.push(
      `${r.id},${r.status},${r.rows || ""},${r.durationS ? formatNumber(r.durationS) : ""},${reason}`,
    );
  }
  fs.writeFileSync(path.join(outDir, "manifest.csv"), manifest.join("\n") + "\n");
  return results;
}
