/**
 * Entry point.  Attach to a running control service:
 *
 *     node dist/main.js --backend 127.0.0.1:4444 --port 8686
 *
 * or let the console spawn one (requires the python package on the path):
 *
 *     node dist/main.js --spawn lab --seed 1 --port 8686
 */
import { spawnBackend, type Backend } from "./backend.js";
import { startConsole } from "./server.js";

interface Args {
  backend?: string;
  spawn?: string;
  seed?: number;
  port: number;
  python?: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { port: 8686 };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--backend":
        args.backend = value;
        i++;
        break;
      case "--spawn":
        args.spawn = value;
        i++;
        break;
      case "--seed":
        args.seed = Number(value);
        i++;
        break;
      case "--port":
        args.port = Number(value);
        i++;
        break;
      case "--python":
        args.python = value;
        i++;
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.backend && !args.spawn) {
    throw new Error("need --backend HOST:PORT or --spawn SCENARIO");
  }
  return args;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  let backend: Backend | null = null;
  let host: string;
  let port: number;
  if (args.spawn) {
    backend = await spawnBackend({
      scenario: args.spawn,
      seed: args.seed,
      python: args.python,
    });
    ({ host, port } = backend);
    console.log(`backend up on ${host}:${port}`);
  } else {
    const [h, p] = args.backend!.split(":");
    host = h || "127.0.0.1";
    port = Number(p);
    if (!Number.isFinite(port)) throw new Error(`bad --backend ${args.backend}`);
  }

  const running = await startConsole({ host, port }, args.port);
  console.log(`console on http://127.0.0.1:${running.port}/`);

  const shutdown = async () => {
    await running.close();
    if (backend) await backend.stop();
    process.exit(0);
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);
}

main().catch((err) => {
  console.error(`error: ${err.message ?? err}`);
  process.exit(1);
});
