import { describe, expect, it } from "vitest";
import { HEADER_BYTES, linearIndex, parseMvol, valueAt } from "../src/mvol.js";

function buildMvol(
  dims: [number, number, number],
  dtypeCode: 0 | 1,
  fill: (x: number, y: number, z: number) => number,
  spacing: [number, number, number] = [1, 1, 2.5],
): ArrayBuffer {
  const count = dims[0] * dims[1] * dims[2];
  const itemBytes = dtypeCode === 0 ? 2 : 1;
  const buf = new ArrayBuffer(HEADER_BYTES + count * itemBytes);
  const view = new DataView(buf);
  view.setUint8(0, 0x4d); // M
  view.setUint8(1, 0x56); // V
  view.setUint8(2, 0x4f); // O
  view.setUint8(3, 0x4c); // L
  view.setUint16(4, 1, true);
  view.setUint32(6, dims[0], true);
  view.setUint32(10, dims[1], true);
  view.setUint32(14, dims[2], true);
  view.setFloat32(18, spacing[0], true);
  view.setFloat32(22, spacing[1], true);
  view.setFloat32(26, spacing[2], true);
  view.setUint8(30, dtypeCode);
  let off = HEADER_BYTES;
  // x fastest, z slowest: the linear order the header promises
  for (let z = 0; z < dims[2]; z++) {
    for (let y = 0; y < dims[1]; y++) {
      for (let x = 0; x < dims[0]; x++) {
        if (dtypeCode === 0) {
          view.setInt16(off, fill(x, y, z), true);
          off += 2;
        } else {
          view.setUint8(off, fill(x, y, z));
          off += 1;
        }
      }
    }
  }
  return buf;
}

describe("header parsing", () => {
  it("reads dims, spacing, and dtype from a label volume", () => {
    const buf = buildMvol([3, 4, 2], 1, () => 7);
    const vol = parseMvol(buf);
    expect(vol.version).toBe(1);
    expect(vol.dims).toEqual([3, 4, 2]);
    expect(vol.spacing[2]).toBeCloseTo(2.5, 6);
    expect(vol.dtypeCode).toBe(1);
    expect(vol.data).toBeInstanceOf(Uint8Array);
    expect(vol.data.length).toBe(24);
  });

  it("reads signed 16-bit payloads", () => {
    const buf = buildMvol([2, 2, 2], 0, (x, y, z) => -1000 + x + 10 * y + 100 * z);
    const vol = parseMvol(buf);
    expect(vol.data).toBeInstanceOf(Int16Array);
    expect(valueAt(vol, 0, 0, 0)).toBe(-1000);
    expect(valueAt(vol, 1, 1, 1)).toBe(-889);
  });

  it("rejects bad magic, bad dtype, and truncation", () => {
    const ok = buildMvol([2, 2, 2], 1, () => 0);
    const bad = ok.slice(0);
    new DataView(bad).setUint8(0, 0x58);
    expect(() => parseMvol(bad)).toThrow(/magic/);

    const badDtype = ok.slice(0);
    new DataView(badDtype).setUint8(30, 9);
    expect(() => parseMvol(badDtype)).toThrow(/dtype/);

    expect(() => parseMvol(ok.slice(0, 20))).toThrow(/truncated/);
    expect(() => parseMvol(ok.slice(0, ok.byteLength - 1))).toThrow(/size/);
  });
});

describe("linear indexing", () => {
  it("advances fastest along x", () => {
    const dims: [number, number, number] = [3, 4, 2];
    expect(linearIndex(0, 0, 0, dims)).toBe(0);
    expect(linearIndex(1, 0, 0, dims)).toBe(1);
    expect(linearIndex(0, 1, 0, dims)).toBe(3);
    expect(linearIndex(0, 0, 1, dims)).toBe(12);
    expect(linearIndex(2, 3, 1, dims)).toBe(23);
  });

  it("matches the writer's traversal order", () => {
    const dims: [number, number, number] = [4, 3, 3];
    const vol = parseMvol(buildMvol(dims, 1, (x, y, z) => (x + 5 * y + 31 * z) % 251));
    for (const [x, y, z] of [[0, 0, 0], [3, 2, 2], [1, 2, 0], [2, 0, 2]] as const) {
      expect(valueAt(vol, x, y, z)).toBe((x + 5 * y + 31 * z) % 251);
    }
  });
});
