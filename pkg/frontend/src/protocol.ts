/**
 * Wire protocol of POST /v1/infill.
 *
 * Request: {"tokens": [...], "mask_positions": [...]} where mask_positions
 * are exactly the ascending indices of the "[MASK]" tokens. Response:
 * {"tokens": [...]} of the same length with every mask replaced by a single
 * token and every other position untouched.
 */

import { z } from "zod";

import { MASK } from "./model.js";

export const MAX_TOKENS = 512;

export const infillRequestSchema = z.strictObject({
  tokens: z.array(z.string().min(1)).min(1),
  mask_positions: z.array(z.int().nonnegative()).min(1),
});

export type InfillRequest = z.infer<typeof infillRequestSchema>;

/** Returns a problem description, or null when the request is coherent. */
export function requestViolation(req: InfillRequest): string | null {
  const { tokens, mask_positions: positions } = req;
  for (let i = 0; i < positions.length; i++) {
    const p = positions[i]!;
    if (p >= tokens.length) {
      return `mask position ${p} is out of range for ${tokens.length} tokens`;
    }
    if (i > 0 && p <= positions[i - 1]!) {
      return "mask_positions must be strictly ascending";
    }
    if (tokens[p] !== MASK) {
      return `token at mask position ${p} is not ${MASK}`;
    }
  }
  const listed = new Set(positions);
  for (let i = 0; i < tokens.length; i++) {
    if (tokens[i] === MASK && !listed.has(i)) {
      return `${MASK} at position ${i} is missing from mask_positions`;
    }
  }
  return null;
}

/** Self-check run on every response before it is sent; null when clean. */
export function responseViolation(
  request: InfillRequest,
  filled: string[],
): string | null {
  if (filled.length !== request.tokens.length) {
    return "response length differs from request";
  }
  const masked = new Set(request.mask_positions);
  for (let i = 0; i < filled.length; i++) {
    const token = filled[i]!;
    if (token === MASK) {
      return `response still contains ${MASK} at position ${i}`;
    }
    if (!masked.has(i) && token !== request.tokens[i]) {
      return `non-mask position ${i} was modified`;
    }
    if (masked.has(i) && (token === "" || /\s/.test(token))) {
      return `fill at position ${i} is not a single token`;
    }
  }
  return null;
}
