#include "dan/cli.hpp"

int main(int argc, char** argv) {
  return dan::cli_dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
