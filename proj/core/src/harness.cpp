namespace contour {}
