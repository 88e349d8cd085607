#!/usr/bin/env node
/**
 * Agent client entry point.
 *
 * Modes:
 *   --oracle <ground_truth.json>   scripted oracle for verification runs
 *   --hook <module.mjs>            user model: default export
 *                                  (request) => string | Promise<string>
 * Transport is stdio by default; --tcp <port> serves TCP instead.
 * Requests are handled strictly sequentially per connection.
 */

import { createServer } from "node:net";
import { readFileSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { createInterface } from "node:readline";

import { GroundTruth, OraclePolicy } from "./oracle.js";
import { ClientSession, ModelHook } from "./session.js";

function usage(): never {
  process.stderr.write(
    "usage: carmsim-agent (--oracle ground_truth.json | --hook module.mjs) [--tcp PORT]\n",
  );
  process.exit(2);
}

async function buildHook(args: Map<string, string>): Promise<ModelHook> {
  if (args.has("oracle")) {
    const truth = JSON.parse(readFileSync(args.get("oracle")!, "utf-8")) as GroundTruth;
    const policy = new OraclePolicy(truth);
    return (request) => policy.respond(request.episodeId, request.feedback);
  }
  if (args.has("hook")) {
    const module = await import(pathToFileURL(args.get("hook")!).href);
    const hook = module.default;
    if (typeof hook !== "function") {
      throw new Error(`hook module must default-export a function`);
    }
    return hook as ModelHook;
  }
  usage();
}

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 1) {
    const arg = argv[i];
    if (arg === "--oracle" || arg === "--hook" || arg === "--tcp") {
      const value = argv[i + 1];
      if (value === undefined) usage();
      args.set(arg.slice(2), value);
      i += 1;
    } else {
      usage();
    }
  }
  return args;
}

function serveStdio(session: ClientSession): void {
  const rl = createInterface({ input: process.stdin, terminal: false });
  let queue: Promise<void> = Promise.resolve();
  rl.on("line", (line) => {
    if (!line.trim()) return;
    queue = queue.then(async () => {
      process.stdout.write(await session.handleLine(line));
    });
  });
}

function serveTcp(makeSession: () => ClientSession, port: number): void {
  const server = createServer((socket) => {
    const session = makeSession();
    let buffer = "";
    let queue: Promise<void> = Promise.resolve();
    socket.on("data", (data) => {
      buffer += data.toString("utf-8");
      while (buffer.includes("\n")) {
        const index = buffer.indexOf("\n");
        const line = buffer.slice(0, index);
        buffer = buffer.slice(index + 1);
        if (!line.trim()) continue;
        queue = queue.then(async () => {
          socket.write(await session.handleLine(line));
        });
      }
    });
    socket.on("error", () => socket.destroy());
  });
  server.listen(port, "127.0.0.1", () => {
    process.stderr.write(`agent client listening on 127.0.0.1:${port}\n`);
  });
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const hook = await buildHook(args);
  if (args.has("tcp")) {
    const port = Number(args.get("tcp"));
    if (!Number.isInteger(port) || port < 0 || port > 65535) usage();
    serveTcp(() => new ClientSession(hook), port);
  } else {
    serveStdio(new ClientSession(hook));
  }
}

main().catch((e) => {
  process.stderr.write(`fatal: ${e instanceof Error ? e.stack : e}\n`);
  process.exit(1);
});
