import * as path from "node:path";
import * as url from "node:url";
import { spawnBackend, type Backend } from "../src/backend.js";

const here = path.dirname(url.fileURLToPath(import.meta.url));

export const APACHE_LAN = path.join(here, "fixtures", "apache-lan.json");

// The simulator package sits two levels up; putting its src on PYTHONPATH
// means the tests do not care whether it was pip-installed.
const pythonPath = [
  path.resolve(here, "..", "..", "src"),
  process.env.PYTHONPATH ?? "",
]
  .filter(Boolean)
  .join(path.delimiter);

export function launch(scenario: string, seed?: number): Promise<Backend> {
  return spawnBackend({ scenario, seed, env: { PYTHONPATH: pythonPath } });
}

export async function waitFor(
  predicate: () => boolean,
  what: string,
  timeoutMs = 10000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!predicate()) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await new Promise((r) => setTimeout(r, 20));
  }
}
