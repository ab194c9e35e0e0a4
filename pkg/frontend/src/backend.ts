/**
 * Convenience launcher for a local control service.  The console normally
 * attaches to one that is already running; this spawns
 * `python3 -m redsim.cli --scenario ... --listen 127.0.0.1:0` and reads the
 * bound address off its "listening on HOST:PORT" banner.
 */
import { spawn, type ChildProcess } from "node:child_process";

export interface BackendOptions {
  scenario: string;
  seed?: number;
  python?: string;
  env?: NodeJS.ProcessEnv;
  startTimeoutMs?: number;
}

export interface Backend {
  host: string;
  port: number;
  proc: ChildProcess;
  stop(): Promise<void>;
}

export function spawnBackend(opts: BackendOptions): Promise<Backend> {
  const python = opts.python ?? "python3";
  const args = ["-m", "redsim.cli", "--scenario", opts.scenario, "--listen", "127.0.0.1:0"];
  if (opts.seed !== undefined) args.push("--seed", String(opts.seed));
  const proc = spawn(python, args, {
    stdio: ["ignore", "pipe", "pipe"],
    env: { ...process.env, ...opts.env },
  });

  return new Promise((resolve, reject) => {
    let out = "";
    let err = "";
    let settled = false;
    const timer = setTimeout(() => {
      if (settled) return;
      settled = true;
      proc.kill();
      reject(new Error(`backend did not announce itself: ${out} ${err}`));
    }, opts.startTimeoutMs ?? 15000);

    proc.stdout!.on("data", (chunk: Buffer) => {
      out += chunk.toString("utf-8");
      const match = out.match(/listening on ([\d.]+):(\d+)/);
      if (match && !settled) {
        settled = true;
        clearTimeout(timer);
        resolve({
          host: match[1]!,
          port: Number(match[2]),
          proc,
          stop: () =>
            new Promise<void>((done) => {
              proc.once("exit", () => done());
              proc.kill();
              setTimeout(() => {
                proc.kill("SIGKILL");
                done();
              }, 3000).unref();
            }),
        });
      }
    });
    proc.stderr!.on("data", (chunk: Buffer) => {
      err += chunk.toString("utf-8");
    });
    proc.once("exit", (code) => {
      if (settled) return;
      settled = true;
      clearTimeout(timer);
      reject(new Error(`backend exited with ${code}: ${err.trim() || out.trim()}`));
    });
    proc.once("error", (spawnErr) => {
      if (settled) return;
      settled = true;
      clearTimeout(timer);
      reject(spawnErr);
    });
  });
}
