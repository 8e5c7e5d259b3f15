/**
 * HTTP surface: POST /v1/infill plus GET /healthz.
 *
 * Every error leaves as JSON {"error": message}: 400 for malformed or
 * incoherent requests, 413 for oversize ones, 500 when the model fails or
 * its output flunks the response self-check. Request handling is stateless;
 * the single model instance fills synchronously on the event loop, which
 * serializes inference without an explicit queue.
 */

import express, { type Express, type NextFunction, type Request, type Response } from "express";

import {
  MAX_TOKENS,
  infillRequestSchema,
  requestViolation,
  responseViolation,
} from "./protocol.js";

export interface Filler {
  fill(tokens: string[], positions: number[], greedy: boolean): string[];
}

export interface AppOptions {
  greedy: boolean;
}

export function buildApp(filler: Filler, options: AppOptions): Express {
  const app = express();
  app.use(express.json());

  app.get("/healthz", (_req: Request, res: Response) => {
    res.json({ status: "ok" });
  });

  app.post("/v1/infill", (req: Request, res: Response) => {
    const parsed = infillRequestSchema.safeParse(req.body);
    if (!parsed.success) {
      const issue = parsed.error.issues[0];
      const where = issue?.path.join(".") || "body";
      res.status(400).json({ error: `${where}: ${issue?.message ?? "invalid request"}` });
      return;
    }
    if (parsed.data.tokens.length > MAX_TOKENS) {
      res.status(413).json({
        error: `request has ${parsed.data.tokens.length} tokens, limit is ${MAX_TOKENS}`,
      });
      return;
    }
    const incoherent = requestViolation(parsed.data);
    if (incoherent !== null) {
      res.status(400).json({ error: incoherent });
      return;
    }

    let filled: string[];
    try {
      filled = filler.fill(parsed.data.tokens, parsed.data.mask_positions, options.greedy);
    } catch (err) {
      res.status(500).json({ error: `model failure: ${(err as Error).message}` });
      return;
    }
    const unsound = responseViolation(parsed.data, filled);
    if (unsound !== null) {
      res.status(500).json({ error: `model produced an invalid fill: ${unsound}` });
      return;
    }
    res.json({ tokens: filled });
  });

  // Body-parser failures (bad JSON, oversized payload) land here.
  app.use((err: Error & { status?: number }, _req: Request, res: Response, next: NextFunction) => {
    if (res.headersSent) {
      next(err);
      return;
    }
    res.status(err.status ?? 400).json({ error: err.message });
  });

  return app;
}
