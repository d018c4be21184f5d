/**
 * Yields integers from zero.
 */
function* naturals() {
  let i = 0;
  while (true) yield i++;
}

const obj = {
  /** Greets someone. */
  greet(name) {
    return "hi " + name;
  },
};
