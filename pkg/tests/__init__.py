# Tests for mobileclinic package
