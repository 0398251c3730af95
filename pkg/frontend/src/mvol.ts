/** Reader for the volume container served by /labels/{stage}.mvol.
 *
 * Layout: "MVOL" magic, u16 version, u32 dims x3, f32 spacing x3, u8
 * dtype code (0 = int16 HU, 1 = uint8 labels), then the voxel payload in
 * x-fastest order.  All fields little-endian, no padding (31-byte header).
 */

export interface MvolVolume {
  version: number;
  dims: [number, number, number];
  spacing: [number, number, number];
  dtypeCode: 0 | 1;
  data: Int16Array | Uint8Array;
}

export const HEADER_BYTES = 31;

export function parseMvol(buf: ArrayBuffer): MvolVolume {
  if (buf.byteLength < HEADER_BYTES) {
    throw new Error(`truncated header: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  const magic = String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3),
  );
  if (magic !== "MVOL") throw new Error(`bad magic ${JSON.stringify(magic)}`);
  const version = view.getUint16(4, true);
  const dims: [number, number, number] = [
    view.getUint32(6, true),
    view.getUint32(10, true),
    view.getUint32(14, true),
  ];
  const spacing: [number, number, number] = [
    view.getFloat32(18, true),
    view.getFloat32(22, true),
    view.getFloat32(26, true),
  ];
  const dtypeCode = view.getUint8(30);
  if (dtypeCode !== 0 && dtypeCode !== 1) {
    throw new Error(`unknown dtype code ${dtypeCode}`);
  }
  const count = dims[0] * dims[1] * dims[2];
  const itemBytes = dtypeCode === 0 ? 2 : 1;
  const expected = HEADER_BYTES + count * itemBytes;
  if (buf.byteLength !== expected) {
    throw new Error(`payload size ${buf.byteLength} != expected ${expected}`);
  }
  // Int16Array needs 2-byte alignment but the header is 31 bytes, so copy.
  const payload = buf.slice(HEADER_BYTES);
  const data = dtypeCode === 0 ? new Int16Array(payload) : new Uint8Array(payload);
  return { version, dims, spacing, dtypeCode, data };
}

/** x runs fastest, z slowest. */
export function linearIndex(
  x: number,
  y: number,
  z: number,
  dims: [number, number, number],
): number {
  return x + dims[0] * (y + dims[1] * z);
}

export function valueAt(vol: MvolVolume, x: number, y: number, z: number): number {
  return vol.data[linearIndex(x, y, z, vol.dims)];
}
