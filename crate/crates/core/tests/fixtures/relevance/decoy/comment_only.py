# import hashlib
import json

print(json.dumps({}))
