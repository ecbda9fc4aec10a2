# Test suite for hadiff
