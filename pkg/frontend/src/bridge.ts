/**
 * Bindings exposing the solver's implicit layer as a differentiable function.
 *
 * The bridge never reimplements numerics: the forward entry shells out to the
 * solver CLI's `solve` verb and the backward entry to its `backward` verb, so
 * forward values are identical to CLI output files and gradients come from
 * the solver's own adjoint path.  One BoundFunction owns a scratch directory
 * and serializes its calls; create one per worker.
 */

import { spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import {
  Field,
  loadCheckpoint,
  loadField,
  loadGradient,
  numToText,
  parseConfig,
  saveCheckpoint,
  saveField,
  writeConfig,
} from "./formats";
import { customOp, Tensor } from "./autograd";

export interface BridgeOptions {
  /** command used to invoke the solver; defaults to `python3 -m fvgrad.harness.cli` */
  python?: string;
  keepScratch?: boolean;
}

export class SolverError extends Error {
  constructor(message: string, public exitCode: number | null) {
    super(message);
  }
}

export class BoundFunction {
  readonly configPath: string;
  readonly workDir: string;
  private readonly python: string;
  private readonly runConfigPath: string;
  private readonly thetaPath: string;
  private theta: Float64Array;
  private meta: { ni: number; nj: number; mode: string };
  private callCounter = 0;

  constructor(configPath: string, opts: BridgeOptions = {}) {
    this.configPath = configPath;
    this.python = opts.python ?? process.env.FVGRAD_PYTHON ?? "python3";
    this.workDir = fs.mkdtempSync(path.join(os.tmpdir(), "fvgrad-bridge-"));
    this.thetaPath = path.join(this.workDir, "theta.txt");

    const sections = parseConfig(fs.readFileSync(configPath, "utf8"));
    const mesh = sections.get("mesh");
    const plant = sections.get("plant");
    if (!mesh || !plant) {
      throw new Error("config must define [mesh] and [plant]");
    }
    const ni = parseInt(mesh.get("ni") ?? "16", 10);
    const nj = parseInt(mesh.get("nj") ?? "8", 10);
    const kind = plant.get("kind") ?? "ns";
    const mode = kind === "scalar" ? "scalar_source"
      : kind === "ns" ? "mu_t" : "beta";
    this.meta = { ni, nj, mode };

    if (!sections.has("model")) {
      sections.set("model", new Map());
    }
    const model = sections.get("model")!;
    if ((model.get("kind") ?? "field") !== "field") {
      throw new Error("the bridge binds field-parameter corrections");
    }
    model.set("kind", "field");
    model.set("theta_file", this.thetaPath);
    this.runConfigPath = path.join(this.workDir, "run.cfg");
    fs.writeFileSync(this.runConfigPath, writeConfig(sections));

    this.theta = new Float64Array(ni * nj);
    this.writeTheta();
  }

  parameters(): Float64Array {
    return Float64Array.from(this.theta);
  }

  setParameters(theta: Float64Array | number[]): void {
    const arr = theta instanceof Float64Array ? theta : Float64Array.from(theta);
    if (arr.length !== this.meta.ni * this.meta.nj) {
      throw new Error(
        `expected ${this.meta.ni * this.meta.nj} parameters, got ${arr.length}`);
    }
    this.theta = Float64Array.from(arr);
    this.writeTheta();
  }

  private writeTheta(): void {
    saveCheckpoint(this.thetaPath,
      `field ${this.meta.ni} ${this.meta.nj} ${this.meta.mode}`, this.theta);
  }

  private run(args: string[]): void {
    const r = spawnSync(this.python, ["-m", "fvgrad.harness.cli", ...args],
      { encoding: "utf8" });
    if (r.status !== 0) {
      throw new SolverError(
        `solver exited with ${r.status}: ${r.stderr || r.stdout}`, r.status);
    }
  }

  private freshOutDir(tag: string): string {
    const dir = path.join(this.workDir, `${tag}_${this.callCounter++}`);
    fs.mkdirSync(dir, { recursive: true });
    return dir;
  }

  /** Converged state for the current parameters, as loaded from the CLI dump. */
  forwardField(): Field {
    const out = this.freshOutDir("fwd");
    this.run(["solve", "--config", this.runConfigPath, "--out", out]);
    return loadField(path.join(out, "state.txt"));
  }

  /** Adjoint gradient d<cotangent, w*>/d(theta) through the solver. */
  backwardField(cotangent: Field): Float64Array {
    const out = this.freshOutDir("bwd");
    const cotPath = path.join(out, "cotangent.txt");
    saveField(cotPath, cotangent);
    this.run(["backward", "--config", this.runConfigPath, "--out", out,
      "--cotangent", cotPath]);
    return loadGradient(path.join(out, "gradient.txt"));
  }

  /**
   * Join the host tape: theta tensor in, converged-state tensor out, with
   * the backward rule delegating to the solver's adjoint.
   */
  apply(theta: Tensor): Tensor {
    let lastField: Field | null = null;
    return customOp(
      theta,
      (x: Float64Array) => {
        this.setParameters(x);
        lastField = this.forwardField();
        return Float64Array.from(lastField.data);
      },
      (outGrad: Float64Array) => {
        const f = lastField!;
        const cot: Field = { ni: f.ni, nj: f.nj, m: f.m, names: f.names,
          data: Float64Array.from(outGrad) };
        return this.backwardField(cot);
      },
    );
  }

  dispose(): void {
    fs.rmSync(this.workDir, { recursive: true, force: true });
  }
}

export function bind(configPath: string, opts: BridgeOptions = {}): BoundFunction {
  return new BoundFunction(configPath, opts);
}

export { numToText };
