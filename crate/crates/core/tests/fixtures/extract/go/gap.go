package gap

// Detached.

func Lonely() {}

// Directive follows.
//
// Second paragraph.
func Paragraphs() {}
