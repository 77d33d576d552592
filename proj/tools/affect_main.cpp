#include <iostream>

#include "affect/cli.hpp"

int main(int argc, char** argv) {
    return affect::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
