/** A small tagged corpus shared by the model and service suites. */
export const FIXTURE = [
  "play O",
  "halo B-song",
  "by O",
  "nova B-artist",
  "",
  "play O",
  "orbit B-song",
  "by O",
  "quinn B-artist",
  "",
  "book O",
  "blue B-venue",
  "note I-venue",
  "tonight O",
  "",
  "play O",
  "halo B-song",
  "again O",
  "",
].join("\n");
