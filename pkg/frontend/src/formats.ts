/**
 * Parsers and writers for the solver's plain-text artifact formats.
 *
 * Numbers are serialized with JavaScript's shortest round-trip
 * representation, which the Python side reads back bit-exactly (both are
 * IEEE-754 doubles).
 */

import * as fs from "fs";

export interface Field {
  ni: number;
  nj: number;
  m: number;
  names: string[];
  /** row-major over (i, j, k) */
  data: Float64Array;
}

export function loadField(path: string): Field {
  const lines = fs.readFileSync(path, "utf8").trim().split("\n");
  const head = lines[0].trim().split(/\s+/);
  const ni = parseInt(head[0], 10);
  const nj = parseInt(head[1], 10);
  const m = parseInt(head[2], 10);
  const names = head.slice(3, 3 + m);
  const data = new Float64Array(ni * nj * m);
  let row = 1;
  for (let i = 0; i < ni; i++) {
    for (let j = 0; j < nj; j++) {
      const vals = lines[row++].trim().split(/\s+/);
      for (let k = 0; k < m; k++) {
        data[(i * nj + j) * m + k] = parseFloat(vals[k]);
      }
    }
  }
  return { ni, nj, m, names, data };
}

export function saveField(path: string, field: Field): void {
  const { ni, nj, m, names, data } = field;
  const out: string[] = [`${ni} ${nj} ${m} ${names.join(" ")}`];
  for (let i = 0; i < ni; i++) {
    for (let j = 0; j < nj; j++) {
      const vals: string[] = [];
      for (let k = 0; k < m; k++) {
        vals.push(numToText(data[(i * nj + j) * m + k]));
      }
      out.push(vals.join(" "));
    }
  }
  fs.writeFileSync(path, out.join("\n") + "\n");
}

/** Shortest decimal text that round-trips the double exactly. */
export function numToText(x: number): string {
  return Object.is(x, -0) ? "-0" : String(x);
}

export function saveCheckpoint(path: string, header: string,
                               theta: Float64Array): void {
  const out: string[] = [`# ${header}`, `${theta.length}`];
  for (const v of theta) {
    out.push(numToText(v));
  }
  fs.writeFileSync(path, out.join("\n") + "\n");
}

export function loadCheckpoint(path: string): { header: string[]; theta: Float64Array } {
  const lines = fs.readFileSync(path, "utf8").trim().split("\n");
  const header = lines[0].replace(/^#\s*/, "").trim().split(/\s+/);
  let k = 1;
  while (lines[k].startsWith("#")) k++;
  const n = parseInt(lines[k], 10);
  const theta = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    theta[i] = parseFloat(lines[k + 1 + i]);
  }
  return { header, theta };
}

export function loadGradient(path: string): Float64Array {
  const lines = fs.readFileSync(path, "utf8").trim().split("\n");
  const n = parseInt(lines[0], 10);
  const g = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    g[i] = parseFloat(lines[1 + i]);
  }
  return g;
}

/** Minimal reader/writer for the flat key-value config format. */
export function parseConfig(text: string): Map<string, Map<string, string>> {
  const sections = new Map<string, Map<string, string>>();
  let current: Map<string, string> | null = null;
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line || line.startsWith("#")) continue;
    if (line.startsWith("[") && line.endsWith("]")) {
      current = new Map();
      sections.set(line.slice(1, -1).trim(), current);
      continue;
    }
    const eq = line.indexOf("=");
    if (eq < 0 || current === null) {
      throw new Error(`malformed config line: ${raw}`);
    }
    current.set(line.slice(0, eq).trim(), line.slice(eq + 1).trim());
  }
  return sections;
}

export function writeConfig(sections: Map<string, Map<string, string>>): string {
  const out: string[] = [];
  for (const [sec, entries] of sections) {
    out.push(`[${sec}]`);
    for (const [k, v] of entries) {
      out.push(`${k} = ${v}`);
    }
    out.push("");
  }
  return out.join("\n");
}
