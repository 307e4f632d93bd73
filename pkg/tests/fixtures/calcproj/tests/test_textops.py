import unittest

from calclib.textops import join_nonempty, shout, word_count


class TextOpsTests(unittest.TestCase):
    def test_shout(self):
        self.assertEqual(shout("hey"), "HEY!")

    def test_word_count(self):
        self.assertEqual(word_count("one two  three"), 3)

    def test_join_nonempty(self):
        self.assertEqual(join_nonempty(["a", "", "b", None, "c"]), "a, b, c")


if __name__ == "__main__":
    unittest.main()
