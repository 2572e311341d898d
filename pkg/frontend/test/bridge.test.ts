/**
 * Bridge transparency: forward values identical to the solver CLI's own
 * dumps, backward gradients identical to the solver's adjoint output, and a
 * host-side finite-difference probe of the whole chain.
 */

import { strict as assert } from "node:assert";
import { test } from "node:test";
import { spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { constant, numericalGradient, param, sub, sumSquares } from "../src/autograd";
import { bind } from "../src/bridge";
import { loadField, loadGradient } from "../src/formats";

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

const PY = process.env.FVGRAD_PYTHON ?? "python3";

function writeConfigFile(): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "fvgrad-bt-"));
  const p = path.join(dir, "case.cfg");
  fs.writeFileSync(p, CONFIG);
  return p;
}

function smoothTheta(n: number): Float64Array {
  const th = new Float64Array(n);
  for (let k = 0; k < n; k++) {
    th[k] = 0.3 * Math.sin(0.37 * k) + 0.05;
  }
  return th;
}

test("theta round-trip through the bridge is bitwise", () => {
  const fn = bind(writeConfigFile());
  const th = smoothTheta(64);
  fn.setParameters(th);
  const back = fn.parameters();
  for (let k = 0; k < th.length; k++) {
    assert.ok(Object.is(back[k], th[k]));
  }
  fn.dispose();
});

test("forward values bitwise-equal the core CLI dump", () => {
  const cfg = writeConfigFile();
  const fn = bind(cfg);
  const th = smoothTheta(64);
  fn.setParameters(th);
  const viaBridge = fn.forwardField();

  // independent CLI invocation against the bridge's own derived config
  const out = fs.mkdtempSync(path.join(os.tmpdir(), "fvgrad-ref-"));
  const r = spawnSync(PY, ["-m", "fvgrad.harness.cli", "solve",
    "--config", path.join(fn.workDir, "run.cfg"), "--out", out],
    { encoding: "utf8" });
  assert.equal(r.status, 0, r.stderr);
  const ref = loadField(path.join(out, "state.txt"));
  assert.equal(viaBridge.data.length, ref.data.length);
  for (let k = 0; k < ref.data.length; k++) {
    assert.ok(Object.is(viaBridge.data[k], ref.data[k]), `entry ${k}`);
  }
  fn.dispose();
});

test("backward gradients match the core adjoint output", () => {
  const cfg = writeConfigFile();
  const fn = bind(cfg);
  const th = smoothTheta(64);
  fn.setParameters(th);
  const state = fn.forwardField();

  const cot = { ...state, data: new Float64Array(state.data.length) };
  for (let k = 0; k < cot.data.length; k++) {
    cot.data[k] = Math.cos(0.11 * k);
  }
  const viaBridge = fn.backwardField(cot);

  // reference: invoke the CLI adjoint directly and parse its gradient file
  const out = fs.mkdtempSync(path.join(os.tmpdir(), "fvgrad-adj-"));
  const cotPath = path.join(out, "cot.txt");
  const lines = [`${state.ni} ${state.nj} ${state.m} ${state.names.join(" ")}`];
  for (let i = 0; i < state.ni * state.nj; i++) {
    lines.push(String(cot.data[i]));
  }
  fs.writeFileSync(cotPath, lines.join("\n") + "\n");
  const r = spawnSync(PY, ["-m", "fvgrad.harness.cli", "backward",
    "--config", path.join(fn.workDir, "run.cfg"), "--out", out,
    "--cotangent", cotPath], { encoding: "utf8" });
  assert.equal(r.status, 0, r.stderr);
  const ref = loadGradient(path.join(out, "gradient.txt"));

  let worst = 0;
  for (let k = 0; k < ref.length; k++) {
    const denom = Math.max(Math.abs(ref[k]), 1e-300);
    worst = Math.max(worst, Math.abs(viaBridge[k] - ref[k]) / denom);
  }
  assert.ok(worst <= 1e-12, `relative gradient mismatch ${worst}`);
  fn.dispose();
});

test("host-framework finite differences validate the tape chain", () => {
  const cfg = writeConfigFile();
  const fn = bind(cfg);
  const n = 64;
  const thTruth = smoothTheta(n);
  fn.setParameters(thTruth);
  const target = fn.forwardField();

  const th0 = new Float64Array(n).fill(0.1);
  const loss = (x: Float64Array): number => {
    fn.setParameters(x);
    const f = fn.forwardField();
    let s = 0;
    for (let k = 0; k < f.data.length; k++) {
      s += 0.5 * (f.data[k] - target.data[k]) ** 2;
    }
    return s;
  };

  const p = param(th0);
  const state = fn.apply(p);
  const j = sumSquares(sub(state, constant(target.data)));
  j.backward();

  const fd = numericalGradient(loss, th0, [5, 27, 50], 1e-6);
  for (const [k, g] of fd) {
    const rel = Math.abs(p.grad![k] - g) / Math.max(Math.abs(g), 1e-12);
    assert.ok(rel <= 1e-5, `index ${k}: adjoint ${p.grad![k]} vs fd ${g}`);
  }
  fn.dispose();
});
