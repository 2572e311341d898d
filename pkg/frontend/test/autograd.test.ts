import { strict as assert } from "node:assert";
import { test } from "node:test";

import {
  constant,
  customOp,
  gather,
  mul,
  numericalGradient,
  param,
  scale,
  sub,
  sumSquares,
} from "../src/autograd";

test("composite gradient matches finite differences", () => {
  const x0 = Float64Array.of(0.4, -1.2, 2.0, 0.7);
  const c = Float64Array.of(1.0, 0.5, -0.3, 2.0);

  const f = (x: Float64Array): number => {
    const p = param(x);
    const t = sumSquares(scale(mul(sub(p, constant(c)), p), 1.5));
    return t.value[0];
  };

  const p = param(x0);
  const loss = sumSquares(scale(mul(sub(p, constant(c)), p), 1.5));
  loss.backward();
  const fd = numericalGradient(f, x0, [0, 1, 2, 3]);
  for (const [k, g] of fd) {
    const rel = Math.abs(p.grad![k] - g) / Math.max(Math.abs(g), 1e-12);
    assert.ok(rel < 1e-6, `index ${k}: ${p.grad![k]} vs ${g}`);
  }
});

test("gather accumulates duplicate indices", () => {
  const p = param([1.0, 2.0, 3.0]);
  const g = gather(p, [0, 0, 2]);
  const loss = sumSquares(g);
  loss.backward();
  // d/dx0 of 0.5*(x0^2 + x0^2 + x2^2) = 2 x0
  assert.equal(p.grad![0], 2.0);
  assert.equal(p.grad![1], 0.0);
  assert.equal(p.grad![2], 3.0);
});

test("custom op backward is chained", () => {
  const p = param([2.0, 3.0]);
  const doubled = customOp(
    p,
    (x) => Float64Array.of(2 * x[0], 2 * x[1]),
    (g) => Float64Array.of(2 * g[0], 2 * g[1]),
  );
  const loss = sumSquares(doubled);
  loss.backward();
  // J = 0.5*((2a)^2+(2b)^2); dJ/da = 4a
  assert.equal(p.grad![0], 8.0);
  assert.equal(p.grad![1], 12.0);
});

test("parameter reused twice accumulates", () => {
  const p = param([1.5]);
  const y = mul(p, p);
  y.backward();
  assert.equal(p.grad![0], 3.0);
});
