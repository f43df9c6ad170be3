#include <iostream>
#include <string>
#include <vector>

#include "slr/service.hpp"

int main(int argc, char **argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return slr::cli_dispatch(args, std::cout, std::cerr);
}
