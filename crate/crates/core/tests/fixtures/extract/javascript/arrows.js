/** Doubles a value. */
const double = (x) => x * 2;

// Triples a value.
const triple = function (x) {
  return x * 3;
};
