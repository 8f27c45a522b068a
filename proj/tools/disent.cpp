#include <iostream>

#include "disent/cli.hpp"

int main(int argc, char** argv) {
    return disent::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
