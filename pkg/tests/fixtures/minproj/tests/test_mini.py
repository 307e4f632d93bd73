import unittest

from minilib import double, greet


class MiniTests(unittest.TestCase):
    def test_double(self):
        self.assertEqual(double(4), 8)

    def test_greet(self):
        self.assertEqual(greet("Ada"), "Hi Ada")


if __name__ == "__main__":
    unittest.main()
