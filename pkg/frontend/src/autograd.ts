/**
 * Minimal reverse-mode tape over flat Float64Array tensors.
 *
 * Just enough machinery to host external differentiable functions: parameter
 * leaves, elementwise arithmetic, reductions, and custom operators whose
 * backward rule is supplied by the caller (the solver bridge plugs in here).
 */

export class Tensor {
  value: Float64Array;
  grad: Float64Array | null = null;
  requiresGrad: boolean;
  private backwardFn: (() => void) | null = null;
  private parents: Tensor[] = [];

  constructor(value: Float64Array | number[], requiresGrad = false) {
    this.value = value instanceof Float64Array ? value : Float64Array.from(value);
    this.requiresGrad = requiresGrad;
  }

  get size(): number {
    return this.value.length;
  }

  ensureGrad(): Float64Array {
    if (this.grad === null) {
      this.grad = new Float64Array(this.size);
    }
    return this.grad;
  }

  static result(value: Float64Array, parents: Tensor[],
                backwardFn: () => void): Tensor {
    const t = new Tensor(value, parents.some((p) => p.requiresGrad));
    t.parents = parents;
    t.backwardFn = backwardFn;
    return t;
  }

  /** Reverse sweep seeded with d(out)/d(out) = 1 for a scalar output. */
  backward(): void {
    if (this.size !== 1) {
      throw new Error("backward() expects a scalar output");
    }
    const order: Tensor[] = [];
    const seen = new Set<Tensor>();
    const visit = (t: Tensor) => {
      if (seen.has(t)) return;
      seen.add(t);
      for (const p of t.parents) visit(p);
      order.push(t);
    };
    visit(this);
    this.ensureGrad()[0] = 1.0;
    for (let k = order.length - 1; k >= 0; k--) {
      const node = order[k];
      if (node.backwardFn && node.grad !== null) {
        node.backwardFn();
      }
    }
  }
}

export function param(value: Float64Array | number[]): Tensor {
  return new Tensor(value, true);
}

export function constant(value: Float64Array | number[]): Tensor {
  return new Tensor(value, false);
}

function zipSizes(a: Tensor, b: Tensor): number {
  if (a.size !== b.size) {
    throw new Error(`size mismatch: ${a.size} vs ${b.size}`);
  }
  return a.size;
}

export function sub(a: Tensor, b: Tensor): Tensor {
  const n = zipSizes(a, b);
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = a.value[i] - b.value[i];
  const t = Tensor.result(out, [a, b], () => {
    const g = t.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] += g[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) gb[i] -= g[i];
    }
  });
  return t;
}

export function mul(a: Tensor, b: Tensor): Tensor {
  const n = zipSizes(a, b);
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = a.value[i] * b.value[i];
  const t = Tensor.result(out, [a, b], () => {
    const g = t.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) ga[i] += g[i] * b.value[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) gb[i] += g[i] * a.value[i];
    }
  });
  return t;
}

export function scale(a: Tensor, c: number): Tensor {
  const out = new Float64Array(a.size);
  for (let i = 0; i < a.size; i++) out[i] = a.value[i] * c;
  const t = Tensor.result(out, [a], () => {
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      const g = t.grad!;
      for (let i = 0; i < a.size; i++) ga[i] += g[i] * c;
    }
  });
  return t;
}

export function gather(a: Tensor, indices: Int32Array | number[]): Tensor {
  const idx = indices instanceof Int32Array ? indices : Int32Array.from(indices);
  const out = new Float64Array(idx.length);
  for (let i = 0; i < idx.length; i++) out[i] = a.value[idx[i]];
  const t = Tensor.result(out, [a], () => {
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      const g = t.grad!;
      for (let i = 0; i < idx.length; i++) ga[idx[i]] += g[i];
    }
  });
  return t;
}

export function sumSquares(a: Tensor): Tensor {
  let s = 0.0;
  for (let i = 0; i < a.size; i++) s += a.value[i] * a.value[i];
  const t = Tensor.result(Float64Array.of(0.5 * s), [a], () => {
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      const g0 = t.grad![0];
      for (let i = 0; i < a.size; i++) ga[i] += g0 * a.value[i];
    }
  });
  return t;
}

/**
 * Custom differentiable operator: the forward map and the cotangent rule are
 * provided by the caller; this is the entry point the solver bridge uses to
 * join the tape.
 */
export function customOp(
  input: Tensor,
  forward: (x: Float64Array) => Float64Array,
  backward: (outGrad: Float64Array) => Float64Array,
): Tensor {
  const out = forward(input.value);
  const t = Tensor.result(out, [input], () => {
    if (input.requiresGrad) {
      const gin = backward(t.grad!);
      if (gin.length !== input.size) {
        throw new Error("custom backward returned wrong gradient size");
      }
      const ga = input.ensureGrad();
      for (let i = 0; i < gin.length; i++) ga[i] += gin[i];
    }
  });
  return t;
}

/** Central finite-difference gradient of a scalar function, for testing. */
export function numericalGradient(
  f: (x: Float64Array) => number,
  x: Float64Array,
  indices: number[],
  h = 1e-6,
): Map<number, number> {
  const out = new Map<number, number>();
  for (const k of indices) {
    const xp = Float64Array.from(x);
    const xm = Float64Array.from(x);
    xp[k] += h;
    xm[k] -= h;
    out.set(k, (f(xp) - f(xm)) / (2 * h));
  }
  return out;
}
