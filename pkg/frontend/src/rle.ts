/** Row-major run-length codec matching the service's wire format. */

export interface RlePayload {
  height: number;
  width: number;
  runs: [number, number][];
}

export function encodeRLE(grid: Int32Array, height: number, width: number): RlePayload {
  if (grid.length !== height * width) {
    throw new Error(`grid length ${grid.length} != ${height}x${width}`);
  }
  const runs: [number, number][] = [];
  let i = 0;
  while (i < grid.length) {
    const value = grid[i];
    let j = i + 1;
    while (j < grid.length && grid[j] === value) {
      j++;
    }
    runs.push([value, j - i]);
    i = j;
  }
  return { height, width, runs };
}

export function decodeRLE(payload: RlePayload): { grid: Int32Array; height: number; width: number } {
  const { height, width, runs } = payload;
  const grid = new Int32Array(height * width);
  let pos = 0;
  for (const [value, count] of runs) {
    if (count <= 0) {
      throw new Error("run count must be positive");
    }
    grid.fill(value, pos, pos + count);
    pos += count;
  }
  if (pos !== height * width) {
    throw new Error(`RLE covers ${pos} pixels, expected ${height * width}`);
  }
  return { grid, height, width };
}
