#include <iostream>

int main() {
  std::cout << "fpdiff: work in progress\n";
  return 0;
}
