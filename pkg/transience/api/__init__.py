# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt
