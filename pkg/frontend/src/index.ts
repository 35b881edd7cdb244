export { Int32, doc, documentsEqual, entriesOf } from "./document.js";
export type { Document, Value } from "./document.js";
export {
  BadLength,
  CodecError,
  InvalidUtf8,
  KeyContainsNul,
  NotAnObject,
  ParseError,
  Truncated,
  UnknownTypeTag,
  decodeDocument,
  decodeJson,
  encodeDocument,
  encodeJson,
} from "./codec.js";
export type { CodecId, JsonHints } from "./codec.js";
export { FrameParser, frameBytes } from "./frames.js";
export { BrokerStatusError, ClientSession, validateTopic } from "./client.js";
export type { MessageCallback, SessionOptions } from "./client.js";
