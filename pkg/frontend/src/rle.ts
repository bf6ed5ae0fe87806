// Run-length mask codec matching the service wire format: run lengths over
// the flattened row-major mask, alternating values and starting with the
// count of leading zeros.

export function rleDecode(runs: number[], h: number, w: number): Uint8Array {
  const out = new Uint8Array(h * w);
  let pos = 0;
  let val = 0;
  for (const r of runs) {
    if (val === 1) out.fill(1, pos, pos + r);
    pos += r;
    val ^= 1;
  }
  if (pos !== h * w && runs.length > 0)
    throw new Error(`rle covers ${pos} px, mask has ${h * w}`);
  return out;
}

export function rleEncode(mask: Uint8Array): number[] {
  const runs: number[] = [];
  let val = 0;
  let run = 0;
  for (let i = 0; i < mask.length; i++) {
    const m = mask[i] ? 1 : 0;
    if (m === val) {
      run++;
    } else {
      runs.push(run);
      val = m;
      run = 1;
    }
  }
  if (mask.length > 0) runs.push(run);
  return runs;
}
