package shapes

type Rect struct{ W, H float64 }

// Area returns the area of the rectangle.
func (r Rect) Area() float64 {
	return r.W * r.H
}

// Scale multiplies both sides
// by the factor k.
func (r *Rect) Scale(k float64) {
	r.W *= k
	r.H *= k
}
