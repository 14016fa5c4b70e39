#include <netfilt/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return netfilt::run_cli(argc, argv, std::cout, std::cerr); }
