#include "irdseg/cli.hpp"

int main(int argc, char** argv) { return irdseg::cli_main(argc, argv); }
