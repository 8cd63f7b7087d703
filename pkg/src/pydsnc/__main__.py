# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

import sys

from pydsnc.cli import main

if __name__ == "__main__":
    sys.exit(main())
