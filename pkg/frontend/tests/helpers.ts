import { ChildProcess, spawn } from "node:child_process";
import * as path from "node:path";
import * as readline from "node:readline";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));

export const PY_HELPERS = path.join(here, "py");

export interface ServerHandle {
  proc: ChildProcess;
  host: string;
  port: number;
  stop(): Promise<void>;
}

/** Start the Python broker and resolve once it reports its bound port. */
export function startBroker(codec: "binary" | "json" = "binary"): Promise<ServerHandle> {
  const proc = spawn(
    "python3",
    ["-m", "hri_bridge.cli", "serve", "--bind", "127.0.0.1:0", "--codec", codec],
    { stdio: ["ignore", "pipe", "inherit"] },
  );
  return waitForListening(proc);
}

function waitForListening(proc: ChildProcess): Promise<ServerHandle> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => {
      proc.kill("SIGKILL");
      reject(new Error("server did not report a listening port in time"));
    }, 20_000);
    const rl = readline.createInterface({ input: proc.stdout! });
    rl.on("line", (line) => {
      let parsed: { event?: string; host?: string; port?: number };
      try {
        parsed = JSON.parse(line);
      } catch {
        return;
      }
      if (parsed.event === "listening" && parsed.port) {
        clearTimeout(timer);
        resolve({
          proc,
          host: parsed.host ?? "127.0.0.1",
          port: parsed.port,
          stop: () =>
            new Promise<void>((done) => {
              proc.once("exit", () => done());
              proc.kill("SIGTERM");
              setTimeout(() => proc.kill("SIGKILL"), 5_000).unref();
            }),
        });
      }
    });
    proc.once("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early with code ${code}`));
    });
  });
}

export interface HelperHandle {
  proc: ChildProcess;
  stop(): Promise<void>;
}

/** Spawn a helper script that prints "ready" and then runs until killed. */
export function startHelper(script: string, args: string[]): Promise<HelperHandle> {
  const proc = spawn("python3", [path.join(PY_HELPERS, script), ...args], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => {
      proc.kill("SIGKILL");
      reject(new Error(`${script} did not become ready`));
    }, 20_000);
    const rl = readline.createInterface({ input: proc.stdout! });
    rl.on("line", (line) => {
      if (line.trim() === "ready") {
        clearTimeout(timer);
        resolve({
          proc,
          stop: () =>
            new Promise<void>((done) => {
              proc.once("exit", () => done());
              proc.kill("SIGTERM");
              setTimeout(() => proc.kill("SIGKILL"), 5_000).unref();
            }),
        });
      }
    });
    proc.once("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`${script} exited early with code ${code}`));
    });
  });
}

export function waitFor(pred: () => boolean, timeoutMs = 30_000, intervalMs = 10): Promise<void> {
  return new Promise((resolve, reject) => {
    const start = Date.now();
    const tick = () => {
      if (pred()) {
        resolve();
      } else if (Date.now() - start > timeoutMs) {
        reject(new Error("condition not reached in time"));
      } else {
        setTimeout(tick, intervalMs);
      }
    };
    tick();
  });
}

/** Deterministic PRNG (mulberry32) for reproducible fuzz corpora. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
