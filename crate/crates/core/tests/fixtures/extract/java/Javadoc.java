package demo;

public class Javadoc {
    /**
     * Finds the index of a value.
     * Uses a linear scan.
     *
     * @param xs the values
     * @param x the target
     * @return the index or -1
     */
    public static int indexOf(int[] xs, int x) {
        for (int i = 0; i < xs.length; i++) {
            if (xs[i] == x) return i;
        }
        return -1;
    }
}
