public class Outer {
    /** Outer work. */
    void work() {
    }

    static class Inner {
        /** Inner work. */
        void work() {
        }
    }

    interface Shape {
        /** Area of the shape. */
        double area();
    }
}
