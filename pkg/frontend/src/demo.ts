/**
 * Demo: train a correction field through the host tape's optimizer loop.
 *
 * A twin target state is produced by the solver at a known correction; the
 * loop then recovers the correction from zero by plain gradient descent,
 * with every gradient flowing through the solver's adjoint via the bridge.
 */

import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { constant, param, sub, sumSquares } from "./autograd";
import { bind } from "./bridge";

const CONFIG = `
[general]
seed = 1

[plant]
kind = scalar
velocity = 1.0 0.5
diffusivity = 0.5

[mesh]
type = cartesian
ni = 8
nj = 8
lx = 1.0
ly = 1.0

[bc]
west = dirichlet
east = dirichlet
south = dirichlet
north = dirichlet

[newton]
max_iters = 20
`;

function main(): void {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "fvgrad-demo-"));
  const cfgPath = path.join(dir, "demo.cfg");
  fs.writeFileSync(cfgPath, CONFIG);
  const fn = bind(cfgPath);

  const n = 64;
  const truth = new Float64Array(n);
  for (let i = 0; i < 8; i++) {
    for (let j = 0; j < 8; j++) {
      const x = (i + 0.5) / 8;
      const y = (j + 0.5) / 8;
      truth[i * 8 + j] = 0.5 * Math.exp(-8 * ((x - 0.5) ** 2 + (y - 0.5) ** 2));
    }
  }
  fn.setParameters(truth);
  const target = fn.forwardField();

  let theta = new Float64Array(n);
  const lr = 25.0;
  console.log("iter  loss");
  for (let it = 0; it <= 15; it++) {
    const p = param(theta);
    const state = fn.apply(p);
    const loss = sumSquares(sub(state, constant(target.data)));
    loss.backward();
    console.log(`${it}  ${loss.value[0].toExponential(4)}`);
    const g = p.grad!;
    const next = Float64Array.from(theta);
    for (let k = 0; k < n; k++) next[k] -= lr * g[k];
    theta = next;
  }
  const errNorm = Math.sqrt(
    theta.reduce((s, v, k) => s + (v - truth[k]) ** 2, 0) / n);
  console.log(`rms parameter error vs truth: ${errNorm.toExponential(3)}`);
  fn.dispose();
}

main();
