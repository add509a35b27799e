#include <cstdio>

int main() {
  std::printf("fdm: placeholder\n");
  return 0;
}
