// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "qoeflow/operators.hpp"

int main() {
  std::cout << "qoeflow placeholder\n";
  return 0;
}
