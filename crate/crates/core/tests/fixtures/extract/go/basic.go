package basic

// Add returns the sum of a and b.
func Add(a, b int) int {
	return a + b
}

func Sub(a, b int) int {
	return a - b
}
