/**
 * Adds two numbers.
 * @param {number} a
 * @param {number} b
 */
function add(a, b) {
  return a + b;
}

function sub(a, b) {
  return a - b;
}
