package block

/* Block comments do not document Go functions. */
func Hidden() {}

// Visible is documented.
func Visible() {}
