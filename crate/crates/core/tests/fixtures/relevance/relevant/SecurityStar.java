import java.security.*;

class SecurityStar {
    KeyPairGenerator g() throws Exception { return KeyPairGenerator.getInstance("RSA"); }
}
