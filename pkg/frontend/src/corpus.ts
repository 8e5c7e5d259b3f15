/**
 * Reader for the two-column tagged-utterance format: one `token label` pair
 * per line, utterances separated by blank lines. Labels are carried through
 * unvalidated; the infill model only consumes the token sequences.
 */

export interface Utterance {
  tokens: string[];
  labels: string[];
}

export class CorpusError extends Error {}

export function parseCorpus(text: string): Utterance[] {
  const utterances: Utterance[] = [];
  let tokens: string[] = [];
  let labels: string[] = [];

  const flush = () => {
    if (tokens.length > 0) {
      utterances.push({ tokens, labels });
      tokens = [];
      labels = [];
    }
  };

  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!.trim();
    if (line === "") {
      flush();
      continue;
    }
    const fields = line.split(/\s+/);
    if (fields.length !== 2) {
      throw new CorpusError(`line ${i + 1}: expected "token label", got ${fields.length} fields`);
    }
    tokens.push(fields[0]!);
    labels.push(fields[1]!);
  }
  flush();
  return utterances;
}
