import { readFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { buildApp } from "./app.js";
import { parseCorpus } from "./corpus.js";
import { ContextFiller } from "./model.js";

const USAGE =
  "usage: infill-service --corpus <file.conll> [--port N] [--greedy]\n" +
  "  --corpus  two-column tagged corpus the fill distribution is built from\n" +
  "  --port    listening port (default 8571)\n" +
  "  --greedy  always return the top-scoring fill (deterministic)";

function main(): void {
  let args;
  try {
    args = parseArgs({
      options: {
        corpus: { type: "string" },
        port: { type: "string", default: "8571" },
        greedy: { type: "boolean", default: false },
        help: { type: "boolean", default: false },
      },
    });
  } catch (err) {
    console.error(`error: ${(err as Error).message}\n${USAGE}`);
    process.exit(1);
  }
  if (args.values.help) {
    console.log(USAGE);
    return;
  }
  if (args.values.corpus === undefined) {
    console.error(`error: --corpus is required\n${USAGE}`);
    process.exit(1);
  }
  const port = Number(args.values.port);
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    console.error(`error: invalid port ${args.values.port}`);
    process.exit(1);
  }

  let filler: ContextFiller;
  try {
    filler = new ContextFiller(parseCorpus(readFileSync(args.values.corpus, "utf8")));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    process.exit(2);
  }

  const app = buildApp(filler, { greedy: args.values.greedy });
  app.listen(port, () => {
    console.log(
      `infill service on port ${port}: ${filler.vocabularySize()} vocabulary types, ` +
        `greedy=${args.values.greedy}`,
    );
  });
}

main();
