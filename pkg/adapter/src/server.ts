#!/usr/bin/env node
/**
 * Stdio executor server: newline-delimited UTF-8 JSON, one request in flight,
 * replies correlated by id. Launch from the orchestrator with the `cmd:` env
 * selector:
 *
 *   skillloop train --env "cmd:node adapter/dist/server.js --suite deterministic-tabletop"
 *
 * A malformed request gets an error reply and the process stays alive;
 * "shutdown" replies ok and exits 0. Diagnostics go to stderr only -- stdout
 * carries protocol lines exclusively.
 */

import * as readline from "node:readline";

import { TabletopEnv, errorReply } from "./env";
import { defaultScenarioPath, loadSuite } from "./scenarios";

const MAX_LINE_BYTES = 16 * 1024 * 1024;

interface Args {
  scenarios: string;
  suite: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { scenarios: defaultScenarioPath(), suite: "deterministic-tabletop" };
  for (let i = 0; i < argv.length; i += 1) {
    const flag = argv[i];
    if (flag === "--scenarios" && argv[i + 1]) {
      args.scenarios = argv[++i];
    } else if (flag === "--suite" && argv[i + 1]) {
      args.suite = argv[++i];
    } else {
      process.stderr.write(`unknown argument: ${flag}\n`);
      process.exit(2);
    }
  }
  return args;
}

function writeReply(reply: Record<string, unknown>, onDone?: () => void): void {
  process.stdout.write(JSON.stringify(reply) + "\n", onDone);
}

export function main(): void {
  const args = parseArgs(process.argv.slice(2));
  let env: TabletopEnv;
  try {
    env = new TabletopEnv(loadSuite(args.suite, args.scenarios));
  } catch (error) {
    process.stderr.write(`failed to load scenarios: ${String(error)}\n`);
    process.exit(2);
    return;
  }

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line: string) => {
    if (line.trim() === "") {
      return;
    }
    if (Buffer.byteLength(line, "utf-8") > MAX_LINE_BYTES) {
      writeReply(errorReply(0, `line exceeds ${MAX_LINE_BYTES} bytes`));
      return;
    }
    let request: unknown;
    try {
      request = JSON.parse(line);
    } catch {
      writeReply(errorReply(0, "line is not valid JSON"));
      return;
    }
    if (typeof request !== "object" || request === null || Array.isArray(request)) {
      writeReply(errorReply(0, "message must be a JSON object"));
      return;
    }
    const message = request as Record<string, unknown>;
    const reply = env.handle(message);
    if (message["op"] === "shutdown" && reply["ok"] === true) {
      writeReply(reply, () => process.exit(0));
      return;
    }
    writeReply(reply);
  });
}

if (require.main === module) {
  main();
}
