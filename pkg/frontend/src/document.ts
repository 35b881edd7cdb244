/**
 * Document value model.
 *
 * Documents are ordered string-keyed maps. A Map is the canonical form:
 * plain JS objects silently reorder integer-like keys ("0", "7", ...),
 * which would break byte-exact round-trips.  Plain objects are accepted on
 * encode as a convenience and converted in insertion order.
 *
 * Wire type mapping:
 *   number      -> float64 (always; no integer guessing)
 *   Int32       -> int32
 *   bigint      -> int64
 *   string      -> utf-8 string
 *   boolean     -> bool
 *   Uint8Array  -> binary (generic subtype)
 *   Array       -> array
 *   Map/object  -> sub-document
 */

export class Int32 {
  readonly value: number;

  constructor(value: number) {
    if (!Number.isInteger(value) || value < -2147483648 || value > 2147483647) {
      throw new RangeError(`Int32 value out of range: ${value}`);
    }
    this.value = value;
  }
}

export type Value =
  | number
  | string
  | boolean
  | bigint
  | Uint8Array
  | Int32
  | Value[]
  | Document
  | PlainObject;

export type Document = Map<string, Value>;

interface PlainObject {
  [key: string]: Value;
}

export const INT64_MIN = -(2n ** 63n);
export const INT64_MAX = 2n ** 63n - 1n;

/** Convenience: build a Document from a plain object literal. */
export function doc(obj: PlainObject | Document): Document {
  if (obj instanceof Map) {
    return obj;
  }
  const out: Document = new Map();
  for (const [key, value] of Object.entries(obj)) {
    out.set(key, value);
  }
  return out;
}

export function entriesOf(value: Document | PlainObject): Iterable<[string, Value]> {
  return value instanceof Map ? value.entries() : Object.entries(value);
}

/** Structural equality across the whole value model (bytes compared by content). */
export function documentsEqual(a: Value, b: Value): boolean {
  if (a instanceof Int32 || b instanceof Int32) {
    return a instanceof Int32 && b instanceof Int32 && a.value === b.value;
  }
  if (typeof a === "bigint" || typeof b === "bigint") {
    return typeof a === "bigint" && typeof b === "bigint" && a === b;
  }
  if (a instanceof Uint8Array || b instanceof Uint8Array) {
    if (!(a instanceof Uint8Array) || !(b instanceof Uint8Array) || a.length !== b.length) {
      return false;
    }
    for (let i = 0; i < a.length; i++) {
      if (a[i] !== b[i]) return false;
    }
    return true;
  }
  if (Array.isArray(a) || Array.isArray(b)) {
    if (!Array.isArray(a) || !Array.isArray(b) || a.length !== b.length) {
      return false;
    }
    return a.every((v, i) => documentsEqual(v, b[i]));
  }
  const aIsDoc = a instanceof Map || (typeof a === "object" && a !== null);
  const bIsDoc = b instanceof Map || (typeof b === "object" && b !== null);
  if (aIsDoc || bIsDoc) {
    if (!aIsDoc || !bIsDoc) return false;
    const ae = [...entriesOf(a as Document | PlainObject)];
    const be = [...entriesOf(b as Document | PlainObject)];
    if (ae.length !== be.length) return false;
    return ae.every(([k, v], i) => k === be[i][0] && documentsEqual(v, be[i][1]));
  }
  return a === b || (Number.isNaN(a as number) && Number.isNaN(b as number));
}
