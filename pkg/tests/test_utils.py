import unittest

import numpy as np

from rawjpeg import utils

class TestUtils(unittest.TestCase):
    def __init__(self, method_name: str) -> None:
        super().__init__(method_name)
        self.longMessage = True

    def test_get_optional(self) -> None:
        with self.subTest():
            self.assertEqual(utils.get_optional(None, 42), 42)
        with self.subTest():
            self.assertEqual(utils.get_optional(0, 42), 0)

    def test_round_half_away(self) -> None:
        values = np.array([-2.5, -1.5, -0.5, -0.4, 0.0, 0.4, 0.5, 1.5, 2.5])
        self.assertEqual(utils.round_half_away(values).tolist(),
                         [-3.0, -2.0, -1.0, -0.0, 0.0, 0.0, 1.0, 2.0, 3.0])

    def test_to_unit_codes(self) -> None:
        with self.subTest(case="8-bit"):
            self.assertEqual(utils.to_unit_codes(np.array([-0.1, 0.0, 0.5, 1.0, 1.5]), 255).tolist(),
                             [0.0, 0.0, 128.0, 255.0, 255.0])
        with self.subTest(case="16-bit"):
            self.assertEqual(utils.to_unit_codes(np.array([0.25]), 65535).tolist(), [16384.0])

    def test_is_power_of_two(self) -> None:
        for value, expected in [(0, False), (1, True), (2, True), (3, False), (128, True), (-4, False)]:
            with self.subTest(value=value):
                self.assertEqual(utils.is_power_of_two(value), expected)

    def test_format_table(self) -> None:
        text = utils.format_table(["method", "psnr"], [["jpeg", "31.20"], ["gamma2.2", "33.5"]])
        self.assertEqual(text, "method    psnr\n"
                               "jpeg      31.20\n"
                               "gamma2.2  33.5")

if __name__ == '__main__':
    unittest.main()
