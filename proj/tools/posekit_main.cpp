#include <cstdio>

int main() {
  std::puts("posekit: commands under construction");
  return 0;
}
