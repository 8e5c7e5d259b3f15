/**
 * Corpus-derived mask filler.
 *
 * Candidates are scored by how often they occur next to the masked
 * position's observed neighbors, with a corpus-frequency floor so every
 * vocabulary word stays reachable when the context is unseen. Greedy mode
 * takes the top-scoring candidate (lexicographically smallest on ties);
 * otherwise one is sampled proportionally to the scores.
 */

import type { Utterance } from "./corpus.js";

export const MASK = "[MASK]";

/** Weight of one observed neighbor co-occurrence relative to the frequency floor. */
const CONTEXT_WEIGHT = 10;

export class ModelError extends Error {}

type Counts = Map<string, number>;

function bump(table: Map<string, Counts>, key: string, candidate: string): void {
  let row = table.get(key);
  if (row === undefined) {
    row = new Map();
    table.set(key, row);
  }
  row.set(candidate, (row.get(candidate) ?? 0) + 1);
}

export class ContextFiller {
  private readonly unigram: Counts = new Map();
  /** afterOf.get(w) counts candidates observed immediately right of w. */
  private readonly afterOf = new Map<string, Counts>();
  /** beforeOf.get(w) counts candidates observed immediately left of w. */
  private readonly beforeOf = new Map<string, Counts>();
  private totalTokens = 0;

  constructor(utterances: Utterance[]) {
    for (const u of utterances) {
      for (let i = 0; i < u.tokens.length; i++) {
        const token = u.tokens[i]!;
        if (token === MASK) {
          continue;
        }
        this.unigram.set(token, (this.unigram.get(token) ?? 0) + 1);
        this.totalTokens += 1;
        const left = i > 0 ? u.tokens[i - 1]! : undefined;
        const right = i + 1 < u.tokens.length ? u.tokens[i + 1]! : undefined;
        if (left !== undefined && left !== MASK) {
          bump(this.afterOf, left, token);
        }
        if (right !== undefined && right !== MASK) {
          bump(this.beforeOf, right, token);
        }
      }
    }
    if (this.unigram.size === 0) {
      throw new ModelError("corpus contains no usable tokens");
    }
  }

  vocabularySize(): number {
    return this.unigram.size;
  }

  private score(candidate: string, left: string | undefined, right: string | undefined): number {
    let context = 0;
    if (left !== undefined) {
      context += this.afterOf.get(left)?.get(candidate) ?? 0;
    }
    if (right !== undefined) {
      context += this.beforeOf.get(right)?.get(candidate) ?? 0;
    }
    const floor = this.unigram.get(candidate)! / this.totalTokens;
    return CONTEXT_WEIGHT * context + floor;
  }

  private pick(left: string | undefined, right: string | undefined, greedy: boolean): string {
    let best: string | undefined;
    let bestScore = -1;
    let total = 0;
    const weighted: Array<[string, number]> = [];
    for (const candidate of this.unigram.keys()) {
      const s = this.score(candidate, left, right);
      weighted.push([candidate, s]);
      total += s;
      if (s > bestScore || (s === bestScore && best !== undefined && candidate < best)) {
        best = candidate;
        bestScore = s;
      }
    }
    if (best === undefined || total <= 0) {
      throw new ModelError("no candidate available for mask fill");
    }
    if (greedy) {
      return best;
    }
    let roll = Math.random() * total;
    for (const [candidate, s] of weighted) {
      roll -= s;
      if (roll <= 0) {
        return candidate;
      }
    }
    return weighted[weighted.length - 1]![0];
  }

  /**
   * Fill the masked positions, left to right so an already-filled mask can
   * serve as left context for the next one. Positions must be ascending and
   * point at MASK tokens.
   */
  fill(tokens: string[], positions: number[], greedy: boolean): string[] {
    const out = tokens.slice();
    for (const p of positions) {
      if (out[p] !== MASK) {
        throw new ModelError(`position ${p} does not hold a mask`);
      }
      const left = p > 0 && out[p - 1] !== MASK ? out[p - 1] : undefined;
      const right = p + 1 < out.length && out[p + 1] !== MASK ? out[p + 1] : undefined;
      out[p] = this.pick(left, right, greedy);
    }
    return out;
  }
}
