#include "relocnet_cli.hpp"

int main(int argc, char** argv) { return relocnet::cli::run(argc, argv); }
