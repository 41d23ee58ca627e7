package app;

import javax.crypto.SecretKeyFactory;
import javax.crypto.spec.PBEKeySpec;

public class PbeWrapper {
    public byte[] derive(char[] password, byte[] salt) throws Exception {
        int count = 1000;
        PBEKeySpec spec = new PBEKeySpec(password, salt, count, 256);
        SecretKeyFactory f = SecretKeyFactory.getInstance("PBKDF2WithHmacSHA256");
        return f.generateSecret(spec).getEncoded();
    }
}
